//! Generation and translation backends.
//!
//! The loop only ever talks to the two traits here. Deterministic mocks
//! (scripted steps, dictionary lexicons, identity) cover tests and offline
//! runs; the HTTP pair talks to a real service. Backends are shared
//! immutably across threads; scripted mocks keep their cursor behind a
//! mutex and are meant to serve one episode at a time.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("scripted scenario has no more steps")]
    ScenarioExhausted,
    #[error("no lexicon for {source_lang:?} -> {target_lang:?}")]
    MissingLexicon {
        source_lang: String,
        target_lang: String,
    },
}

/// One generation call: prompt in, raw continuation out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GeneratorRequest {
    pub prompt: String,
    pub stop_sequences: Vec<String>,
    pub max_new_chars: usize,
}

/// One translation call. Backends may assume `source_lang != target_lang`;
/// use [`translate_with`] to get the identity short-circuit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranslationRequest {
    pub text: String,
    pub source_lang: String,
    pub target_lang: String,
}

pub trait Generator: Send + Sync {
    fn generate(&self, req: &GeneratorRequest) -> Result<String, BackendError>;
}

pub trait Translator: Send + Sync {
    fn translate(&self, req: &TranslationRequest) -> Result<String, BackendError>;
}

/// Enforce the generation output contract: cut at the first occurrence of
/// any stop sequence (the stop itself excluded), then cap the char count.
/// The result never contains a stop sequence as a substring.
pub fn apply_generation_limits(text: &str, req: &GeneratorRequest) -> String {
    let mut cut = text.len();
    for stop in &req.stop_sequences {
        if stop.is_empty() {
            continue;
        }
        if let Some(pos) = text.find(stop.as_str()) {
            cut = cut.min(pos);
        }
    }
    text[..cut].chars().take(req.max_new_chars).collect()
}

/// Translate with the language short-circuit applied: when source and
/// target coincide the text passes through verbatim, whatever the backend
/// would have done.
pub fn translate_with(
    backend: &dyn Translator,
    req: &TranslationRequest,
) -> Result<String, BackendError> {
    if req.source_lang == req.target_lang {
        return Ok(req.text.clone());
    }
    backend.translate(req)
}

#[derive(Debug, Deserialize)]
struct ScenarioLine {
    step: usize,
    text: String,
}

/// Replays a fixed list of generations in order, one per call. Calling past
/// the end yields [`BackendError::ScenarioExhausted`].
pub struct ScriptedGenerator {
    steps: Vec<String>,
    cursor: Mutex<usize>,
}

impl ScriptedGenerator {
    pub fn new<S: Into<String>>(steps: Vec<S>) -> Self {
        ScriptedGenerator {
            steps: steps.into_iter().map(Into::into).collect(),
            cursor: Mutex::new(0),
        }
    }

    /// Load a scenario from JSONL lines `{"step": n, "text": "..."}`,
    /// replayed in ascending `step` order.
    pub fn from_jsonl(path: &Path) -> Result<Self, BackendError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Unavailable(format!("scenario {path:?}: {e}")))?;
        let mut lines = Vec::new();
        for (i, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ScenarioLine = serde_json::from_str(line).map_err(|e| {
                BackendError::Unavailable(format!("scenario {path:?} line {}: {e}", i + 1))
            })?;
            lines.push(parsed);
        }
        lines.sort_by_key(|l| l.step);
        Ok(ScriptedGenerator {
            steps: lines.into_iter().map(|l| l.text).collect(),
            cursor: Mutex::new(0),
        })
    }

    /// Rewind to the first step so the instance can serve another episode.
    pub fn reset(&self) {
        *self.cursor.lock().unwrap() = 0;
    }
}

impl Generator for ScriptedGenerator {
    fn generate(&self, req: &GeneratorRequest) -> Result<String, BackendError> {
        let mut cursor = self.cursor.lock().unwrap();
        let Some(step) = self.steps.get(*cursor) else {
            return Err(BackendError::ScenarioExhausted);
        };
        *cursor += 1;
        Ok(apply_generation_limits(step, req))
    }
}

/// Returns its input unchanged; useful when evidence is already usable.
#[derive(Debug, Default, Clone, Copy)]
pub struct IdentityTranslator;

impl Translator for IdentityTranslator {
    fn translate(&self, req: &TranslationRequest) -> Result<String, BackendError> {
        Ok(req.text.clone())
    }
}

/// Token-for-token lexicon lookup. Tokens are whitespace-split, mapped when
/// the lexicon knows them and passed through unchanged otherwise, then
/// re-joined with single spaces.
#[derive(Debug, Default)]
pub struct DictionaryTranslator {
    lexicons: BTreeMap<(String, String), BTreeMap<String, String>>,
}

impl DictionaryTranslator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_lexicon(
        &mut self,
        source_lang: &str,
        target_lang: &str,
        entries: BTreeMap<String, String>,
    ) {
        self.lexicons
            .insert((source_lang.to_string(), target_lang.to_string()), entries);
    }

    /// Load a lexicon for one language pair from a TSV file with
    /// `source<TAB>target` lines. Blank lines and `#` comments are skipped.
    pub fn add_lexicon_tsv(
        &mut self,
        source_lang: &str,
        target_lang: &str,
        path: &Path,
    ) -> Result<(), BackendError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Unavailable(format!("lexicon {path:?}: {e}")))?;
        let mut entries = BTreeMap::new();
        for (i, line) in raw.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((src, dst)) = line.split_once('\t') else {
                return Err(BackendError::Unavailable(format!(
                    "lexicon {path:?} line {}: expected source<TAB>target",
                    i + 1
                )));
            };
            entries.insert(src.to_string(), dst.to_string());
        }
        self.add_lexicon(source_lang, target_lang, entries);
        Ok(())
    }
}

impl Translator for DictionaryTranslator {
    fn translate(&self, req: &TranslationRequest) -> Result<String, BackendError> {
        let key = (req.source_lang.clone(), req.target_lang.clone());
        let Some(lexicon) = self.lexicons.get(&key) else {
            return Err(BackendError::MissingLexicon {
                source_lang: req.source_lang.clone(),
                target_lang: req.target_lang.clone(),
            });
        };
        let mapped: Vec<&str> = req
            .text
            .split_whitespace()
            .map(|tok| lexicon.get(tok).map_or(tok, String::as_str))
            .collect();
        Ok(mapped.join(" "))
    }
}

const HTTP_TIMEOUT: Duration = Duration::from_secs(30);

fn http_client() -> Result<reqwest::blocking::Client, BackendError> {
    reqwest::blocking::Client::builder()
        .timeout(HTTP_TIMEOUT)
        .build()
        .map_err(|e| BackendError::Unavailable(e.to_string()))
}

#[derive(Serialize)]
struct HttpGenerateBody<'a> {
    prompt: &'a str,
    stop: &'a [String],
    max_new_chars: usize,
}

#[derive(Serialize)]
struct HttpTranslateBody<'a> {
    text: &'a str,
    source_lang: &'a str,
    target_lang: &'a str,
}

#[derive(Deserialize)]
struct HttpTextReply {
    text: String,
}

fn post_json<T: Serialize>(
    client: &reqwest::blocking::Client,
    url: &str,
    bearer: Option<&str>,
    body: &T,
) -> Result<String, BackendError> {
    let mut req = client.post(url).json(body);
    if let Some(token) = bearer {
        req = req.bearer_auth(token);
    }
    let resp = req
        .send()
        .map_err(|e| BackendError::Unavailable(format!("{url}: {e}")))?;
    let status = resp.status();
    if !status.is_success() {
        return Err(BackendError::Unavailable(format!("{url}: HTTP {status}")));
    }
    let reply: HttpTextReply = resp
        .json()
        .map_err(|e| BackendError::Unavailable(format!("{url}: bad reply: {e}")))?;
    Ok(reply.text)
}

/// Calls `POST {base}/generate` with `{"prompt", "stop", "max_new_chars"}`
/// and expects `{"text": "..."}`. No retries; any failure is
/// [`BackendError::Unavailable`]. The stop/char limits are re-applied
/// client-side so the output contract holds even for sloppy servers.
pub struct HttpGenerator {
    base: String,
    bearer: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpGenerator {
    pub fn new(base_url: &str, bearer: Option<String>) -> Result<Self, BackendError> {
        Ok(HttpGenerator {
            base: base_url.trim_end_matches('/').to_string(),
            bearer,
            client: http_client()?,
        })
    }
}

impl Generator for HttpGenerator {
    fn generate(&self, req: &GeneratorRequest) -> Result<String, BackendError> {
        let body = HttpGenerateBody {
            prompt: &req.prompt,
            stop: &req.stop_sequences,
            max_new_chars: req.max_new_chars,
        };
        let text = post_json(
            &self.client,
            &format!("{}/generate", self.base),
            self.bearer.as_deref(),
            &body,
        )?;
        Ok(apply_generation_limits(&text, req))
    }
}

/// Calls `POST {base}/translate` with `{"text", "source_lang",
/// "target_lang"}` and expects `{"text": "..."}`.
pub struct HttpTranslator {
    base: String,
    bearer: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpTranslator {
    pub fn new(base_url: &str, bearer: Option<String>) -> Result<Self, BackendError> {
        Ok(HttpTranslator {
            base: base_url.trim_end_matches('/').to_string(),
            bearer,
            client: http_client()?,
        })
    }
}

impl Translator for HttpTranslator {
    fn translate(&self, req: &TranslationRequest) -> Result<String, BackendError> {
        let body = HttpTranslateBody {
            text: &req.text,
            source_lang: &req.source_lang,
            target_lang: &req.target_lang,
        };
        post_json(
            &self.client,
            &format!("{}/translate", self.base),
            self.bearer.as_deref(),
            &body,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(stops: &[&str], max: usize) -> GeneratorRequest {
        GeneratorRequest {
            prompt: String::new(),
            stop_sequences: stops.iter().map(|s| s.to_string()).collect(),
            max_new_chars: max,
        }
    }

    #[test]
    fn test_truncates_at_first_stop_exclusive() {
        let r = req(&["</search>", "</answer>"], 1000);
        assert_eq!(
            apply_generation_limits("<search>q</search>extra", &r),
            "<search>q"
        );
        assert_eq!(
            apply_generation_limits("<answer>a</answer><search>q</search>", &r),
            "<answer>a"
        );
        assert_eq!(
            apply_generation_limits("no stops here", &r),
            "no stops here"
        );
    }

    #[test]
    fn test_truncates_at_max_chars() {
        let r = req(&[], 4);
        assert_eq!(apply_generation_limits("abcdef", &r), "abcd");
        // Char cap counts characters, not bytes.
        assert_eq!(apply_generation_limits("éééééé", &r), "éééé");
    }

    #[test]
    fn test_output_never_contains_stop() {
        let r = req(&["xx", "yy"], 1000);
        for text in ["axxb", "yy", "abyyxx", "plain", "xyxyx"] {
            let out = apply_generation_limits(text, &r);
            assert!(
                !out.contains("xx") && !out.contains("yy"),
                "{text} -> {out}"
            );
        }
    }

    #[test]
    fn test_scripted_generator_order_and_exhaustion() {
        let g = ScriptedGenerator::new(vec!["<think>a</think>", "<answer>b</answer>"]);
        let r = req(&["</answer>"], 1000);
        assert_eq!(g.generate(&r).unwrap(), "<think>a</think>");
        assert_eq!(g.generate(&r).unwrap(), "<answer>b");
        assert_eq!(g.generate(&r).unwrap_err(), BackendError::ScenarioExhausted);
        g.reset();
        assert_eq!(g.generate(&r).unwrap(), "<think>a</think>");
    }

    #[test]
    fn test_scenario_jsonl_loads_in_step_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        std::fs::write(
            &path,
            "{\"step\":2,\"text\":\"second\"}\n{\"step\":1,\"text\":\"first\"}\n",
        )
        .unwrap();
        let g = ScriptedGenerator::from_jsonl(&path).unwrap();
        let r = req(&[], 100);
        assert_eq!(g.generate(&r).unwrap(), "first");
        assert_eq!(g.generate(&r).unwrap(), "second");
    }

    #[test]
    fn test_identity_translator() {
        let t = IdentityTranslator;
        let out = t
            .translate(&TranslationRequest {
                text: "bonjour".into(),
                source_lang: "fr".into(),
                target_lang: "en".into(),
            })
            .unwrap();
        assert_eq!(out, "bonjour");
    }

    #[test]
    fn test_dictionary_translator_maps_and_passes_through() {
        let mut t = DictionaryTranslator::new();
        t.add_lexicon(
            "fr",
            "en",
            [("la", "the"), ("capitale", "capital")]
                .into_iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect(),
        );
        let out = t
            .translate(&TranslationRequest {
                text: "la capitale Paris".into(),
                source_lang: "fr".into(),
                target_lang: "en".into(),
            })
            .unwrap();
        assert_eq!(out, "the capital Paris");

        let err = t
            .translate(&TranslationRequest {
                text: "x".into(),
                source_lang: "th".into(),
                target_lang: "en".into(),
            })
            .unwrap_err();
        assert_eq!(
            err,
            BackendError::MissingLexicon {
                source_lang: "th".into(),
                target_lang: "en".into()
            }
        );
    }

    /// A translator that must never be reached.
    struct Unreachable;
    impl Translator for Unreachable {
        fn translate(&self, _req: &TranslationRequest) -> Result<String, BackendError> {
            Err(BackendError::Unavailable("should not be called".into()))
        }
    }

    #[test]
    fn test_same_language_short_circuits_any_backend() {
        let out = translate_with(
            &Unreachable,
            &TranslationRequest {
                text: "unchanged".into(),
                source_lang: "en".into(),
                target_lang: "en".into(),
            },
        )
        .unwrap();
        assert_eq!(out, "unchanged");
    }

    #[test]
    fn test_lexicon_tsv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fr_en.tsv");
        std::fs::write(&path, "# comment\nla\tthe\ncapitale\tcapital\n\n").unwrap();
        let mut t = DictionaryTranslator::new();
        t.add_lexicon_tsv("fr", "en", &path).unwrap();
        let out = t
            .translate(&TranslationRequest {
                text: "la capitale".into(),
                source_lang: "fr".into(),
                target_lang: "en".into(),
            })
            .unwrap();
        assert_eq!(out, "the capital");
    }

    /// Minimal one-shot HTTP server: accept a single connection, read one
    /// request, reply with the canned status and JSON body.
    fn one_shot_server(status_line: &'static str, body: &'static str) -> String {
        use std::io::{Read, Write};
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            let (mut sock, _) = listener.accept().unwrap();
            let mut buf = vec![0u8; 65536];
            let mut read = 0;
            // Read until the full header block plus declared body arrives.
            loop {
                let n = sock.read(&mut buf[read..]).unwrap();
                read += n;
                let text = String::from_utf8_lossy(&buf[..read]);
                if let Some(head_end) = text.find("\r\n\r\n") {
                    let content_length = text
                        .lines()
                        .find_map(|l| {
                            l.to_ascii_lowercase()
                                .strip_prefix("content-length:")
                                .map(str::trim)
                                .map(String::from)
                        })
                        .and_then(|v| v.parse::<usize>().ok())
                        .unwrap_or(0);
                    if read >= head_end + 4 + content_length {
                        break;
                    }
                }
                if n == 0 {
                    break;
                }
            }
            let reply = format!(
                "{status_line}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            sock.write_all(reply.as_bytes()).unwrap();
        });
        format!("http://{addr}")
    }

    #[test]
    fn test_http_generator_success() {
        let base = one_shot_server("HTTP/1.1 200 OK", "{\"text\":\"<answer>ok</answer>\"}");
        let g = HttpGenerator::new(&base, None).unwrap();
        let out = g.generate(&req(&["</answer>"], 1000)).unwrap();
        assert_eq!(out, "<answer>ok");
    }

    #[test]
    fn test_http_non_200_is_unavailable() {
        let base = one_shot_server("HTTP/1.1 503 Service Unavailable", "{}");
        let g = HttpGenerator::new(&base, None).unwrap();
        let err = g.generate(&req(&[], 10)).unwrap_err();
        assert!(matches!(err, BackendError::Unavailable(_)), "{err:?}");
    }

    #[test]
    fn test_http_translator_success() {
        let base = one_shot_server("HTTP/1.1 200 OK", "{\"text\":\"the capital\"}");
        let t = HttpTranslator::new(&base, None).unwrap();
        let out = t
            .translate(&TranslationRequest {
                text: "la capitale".into(),
                source_lang: "fr".into(),
                target_lang: "en".into(),
            })
            .unwrap();
        assert_eq!(out, "the capital");
    }

    #[test]
    fn test_http_connection_refused_is_unavailable() {
        // Bind then drop a listener to get a port nothing is listening on.
        let port = {
            let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
            l.local_addr().unwrap().port()
        };
        let g = HttpGenerator::new(&format!("http://127.0.0.1:{port}"), None).unwrap();
        let err = g.generate(&req(&[], 10)).unwrap_err();
        assert!(matches!(err, BackendError::Unavailable(_)));
    }
}
