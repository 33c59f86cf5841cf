//! Multi-turn cross-lingual retrieval with a trainable toy search policy.
//!
//! The crate wires together a small agent loop: a generator emits tagged
//! actions (`<search>`, `<answer>`), a per-language BM25 registry serves
//! evidence, non-native evidence is translated and condensed into fact
//! statements, and a group-relative policy-gradient trainer teaches a tiny
//! differentiable policy to drive the loop.

pub mod backends;
pub mod episode;
pub mod harness;
pub mod index;
pub mod integrate;
pub mod metrics;
pub mod policy;
pub mod protocol;
pub mod synth;
pub mod trainer;
