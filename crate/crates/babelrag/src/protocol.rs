//! Tagged action protocol for generator output.
//!
//! A generation is a flat sequence of `<think>`, `<search>`, `<information>`
//! and `<answer>` segments with plain text allowed between them. The grammar
//! is deliberately flat: a tag opening inside another segment is an error,
//! not nesting. The last segment decides what the loop does next: a search,
//! a final response, or a self-correction retry.

use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

/// The four segment kinds the protocol knows about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SegmentKind {
    Think,
    Search,
    Information,
    Answer,
}

impl SegmentKind {
    pub fn tag_name(self) -> &'static str {
        match self {
            SegmentKind::Think => "think",
            SegmentKind::Search => "search",
            SegmentKind::Information => "information",
            SegmentKind::Answer => "answer",
        }
    }

    pub fn open_tag(self) -> &'static str {
        match self {
            SegmentKind::Think => "<think>",
            SegmentKind::Search => "<search>",
            SegmentKind::Information => "<information>",
            SegmentKind::Answer => "<answer>",
        }
    }

    pub fn close_tag(self) -> &'static str {
        match self {
            SegmentKind::Think => "</think>",
            SegmentKind::Search => "</search>",
            SegmentKind::Information => "</information>",
            SegmentKind::Answer => "</answer>",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        match name {
            "think" => Some(SegmentKind::Think),
            "search" => Some(SegmentKind::Search),
            "information" => Some(SegmentKind::Information),
            "answer" => Some(SegmentKind::Answer),
            _ => None,
        }
    }
}

/// One tagged region of a trajectory. `span` is the half-open character
/// range of the body inside the source string (tags excluded), so the body
/// of a non-empty segment always has a non-empty span.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub kind: SegmentKind,
    pub body: String,
    pub span: (usize, usize),
}

/// A parsed generation: ordered segments plus the raw source text.
/// Text outside tags is not represented as segments but survives in `raw`,
/// and [`render`] reproduces `raw` exactly from the two together.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Trajectory {
    pub raw: String,
    pub segments: Vec<Segment>,
}

impl Trajectory {
    /// Body of the answer segment, trimmed, if the trajectory contains one.
    /// Parsing keeps at most one answer (the first), so this is unambiguous.
    pub fn answer(&self) -> Option<&str> {
        self.segments
            .iter()
            .find(|s| s.kind == SegmentKind::Answer)
            .map(|s| s.body.trim())
    }
}

/// Parse failures. The set is closed; fuzzed input can produce nothing else.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("unclosed <{0}> tag")]
    UnclosedTag(&'static str),
    #[error("tag <{inner}> opened inside <{outer}> segment")]
    NestedTag {
        outer: &'static str,
        inner: &'static str,
    },
    #[error("unknown tag <{0}>")]
    UnknownTag(String),
}

/// Why a generation failed to yield an action.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MalformedReason {
    UnclosedTag,
    NestedTag,
    UnknownTag,
    EmptyAction,
    NoAction,
}

impl From<ParseError> for MalformedReason {
    fn from(e: ParseError) -> Self {
        match e {
            ParseError::UnclosedTag(_) => MalformedReason::UnclosedTag,
            ParseError::NestedTag { .. } => MalformedReason::NestedTag,
            ParseError::UnknownTag(_) => MalformedReason::UnknownTag,
        }
    }
}

/// What the final segment of a trajectory asks the loop to do.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ActionEvent {
    Search { query: String },
    FinalResponse { answer: String },
    Malformed(MalformedReason),
}

/// A tag candidate found while scanning: `<name>` or `</name>` with an
/// ASCII-alphabetic name. Anything else starting with `<` is plain text.
struct TagToken {
    name: String,
    closing: bool,
    /// Char index one past the `>`.
    end: usize,
}

fn scan_tag(chars: &[char], at: usize) -> Option<TagToken> {
    debug_assert_eq!(chars[at], '<');
    let mut i = at + 1;
    let closing = chars.get(i) == Some(&'/');
    if closing {
        i += 1;
    }
    let name_start = i;
    while i < chars.len() && chars[i].is_ascii_alphabetic() {
        i += 1;
    }
    if i == name_start || chars.get(i) != Some(&'>') {
        return None;
    }
    Some(TagToken {
        name: chars[name_start..i].iter().collect(),
        closing,
        end: i + 1,
    })
}

/// Parse a generation into a [`Trajectory`].
///
/// Scanning stops once the first `<answer>` segment closes; whatever follows
/// is treated as inert trailing text (still kept in `raw`), which keeps the
/// answer last among the recorded segments. A warning is logged if the tail
/// looks like it holds another answer.
pub fn parse_trajectory(input: &str) -> Result<Trajectory, ParseError> {
    let chars: Vec<char> = input.chars().collect();
    let mut segments = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i] != '<' {
            i += 1;
            continue;
        }
        let Some(tag) = scan_tag(&chars, i) else {
            i += 1;
            continue;
        };
        let Some(kind) = SegmentKind::from_name(&tag.name) else {
            return Err(ParseError::UnknownTag(tag.name));
        };
        if tag.closing {
            // A stray closer outside any segment carries no meaning; it is
            // preserved in `raw` like any other loose text.
            i = tag.end;
            continue;
        }
        let body_start = tag.end;
        let mut j = body_start;
        let mut close = None;
        while j < chars.len() {
            if chars[j] != '<' {
                j += 1;
                continue;
            }
            let Some(inner) = scan_tag(&chars, j) else {
                j += 1;
                continue;
            };
            match SegmentKind::from_name(&inner.name) {
                None => return Err(ParseError::UnknownTag(inner.name)),
                Some(k) if inner.closing && k == kind => {
                    close = Some((j, inner.end));
                    break;
                }
                Some(k) => {
                    return Err(ParseError::NestedTag {
                        outer: kind.tag_name(),
                        inner: k.tag_name(),
                    })
                }
            }
        }
        let Some((body_end, after_close)) = close else {
            return Err(ParseError::UnclosedTag(kind.tag_name()));
        };
        segments.push(Segment {
            kind,
            body: chars[body_start..body_end].iter().collect(),
            span: (body_start, body_end),
        });
        i = after_close;
        if kind == SegmentKind::Answer {
            let tail: String = chars[i..].iter().collect();
            if tail.contains("<answer>") {
                log::warn!("discarding extra <answer> segment after the first");
            }
            break;
        }
    }
    Ok(Trajectory {
        raw: input.to_string(),
        segments,
    })
}

/// Rebuild the exact source text from a trajectory: inter-segment text comes
/// from `raw`, segment text from the recorded kinds and bodies.
pub fn render(t: &Trajectory) -> String {
    let chars: Vec<char> = t.raw.chars().collect();
    let mut out = String::new();
    let mut cursor = 0;
    for seg in &t.segments {
        let open_len = seg.kind.open_tag().len();
        let tag_start = seg.span.0 - open_len;
        out.extend(&chars[cursor..tag_start]);
        out.push_str(seg.kind.open_tag());
        out.push_str(&seg.body);
        out.push_str(seg.kind.close_tag());
        cursor = seg.span.1 + seg.kind.close_tag().len();
    }
    out.extend(&chars[cursor..]);
    out
}

/// Classify the final segment of a trajectory as the next loop action.
/// Search queries and answers are whitespace-trimmed; an action tag whose
/// body trims to nothing is malformed rather than an empty action.
pub fn next_action(t: &Trajectory) -> ActionEvent {
    let Some(last) = t.segments.last() else {
        return ActionEvent::Malformed(MalformedReason::NoAction);
    };
    match last.kind {
        SegmentKind::Search => {
            let query = last.body.trim();
            if query.is_empty() {
                ActionEvent::Malformed(MalformedReason::EmptyAction)
            } else {
                ActionEvent::Search {
                    query: query.to_string(),
                }
            }
        }
        SegmentKind::Answer => {
            let answer = last.body.trim();
            if answer.is_empty() {
                ActionEvent::Malformed(MalformedReason::EmptyAction)
            } else {
                ActionEvent::FinalResponse {
                    answer: answer.to_string(),
                }
            }
        }
        SegmentKind::Think | SegmentKind::Information => {
            ActionEvent::Malformed(MalformedReason::NoAction)
        }
    }
}

/// Parse and classify in one step, mapping parse failures to
/// [`ActionEvent::Malformed`] so the loop has a single retry path.
pub fn classify(input: &str) -> ActionEvent {
    match parse_trajectory(input) {
        Ok(t) => next_action(&t),
        Err(e) => ActionEvent::Malformed(e.into()),
    }
}

static TAG_SHAPE: LazyLock<Regex> = LazyLock::new(|| Regex::new("</?[A-Za-z]+>").unwrap());

/// Replace every tag-shaped substring (`<name>` / `</name>`) with the same
/// text using `⟨`/`⟩` so it can sit inside a segment body without being
/// re-parsed as markup.
pub fn escape_tags(text: &str) -> String {
    TAG_SHAPE
        .replace_all(text, |caps: &regex::Captures| {
            caps[0].replace('<', "\u{27e8}").replace('>', "\u{27e9}")
        })
        .into_owned()
}

/// Errors from rendering evidence into an information block.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RenderError {
    #[error("cannot render an information block from empty evidence")]
    EmptyEvidence,
}

/// Render retrieved evidence as a single `<information>` block. Entries are
/// numbered `Doc k (title): body`, separated by blank lines, and the whole
/// body is tag-escaped so re-parsing yields exactly one Information segment.
pub fn render_information(entries: &[(String, String)]) -> Result<String, RenderError> {
    if entries.is_empty() {
        return Err(RenderError::EmptyEvidence);
    }
    let body = entries
        .iter()
        .enumerate()
        .map(|(i, (title, text))| format!("Doc {} ({}): {}", i + 1, title, text))
        .collect::<Vec<_>>()
        .join("\n\n");
    Ok(format!("<information>{}</information>", escape_tags(&body)))
}

/// Fixed retry instruction appended when a generation yields no valid
/// action. The action tags are mentioned in escaped form so the message can
/// never itself parse as an action when it sits in the context.
pub fn self_correction_message() -> &'static str {
    "Your previous output did not contain a valid action. Continue by emitting exactly one \
     \u{27e8}search\u{27e9}query\u{27e8}/search\u{27e9} or \
     \u{27e8}answer\u{27e9}final answer\u{27e8}/answer\u{27e9} block."
}

/// If the text ends in an unterminated `<search>` or `<answer>` region
/// (the closing tag was eaten by a stop sequence), return it with the
/// closer restored. Returns `None` when there is nothing to complete.
pub fn complete_final_action(text: &str) -> Option<String> {
    let mut best: Option<(usize, SegmentKind)> = None;
    for kind in [SegmentKind::Search, SegmentKind::Answer] {
        if let Some(pos) = text.rfind(kind.open_tag()) {
            let after = pos + kind.open_tag().len();
            if !text[after..].contains(kind.close_tag()) && best.map_or(true, |(p, _)| pos > p) {
                best = Some((pos, kind));
            }
        }
    }
    best.map(|(_, kind)| format!("{}{}", text, kind.close_tag()))
}
