//! Template-driven variation generation.
//!
//! A [`Template`] turns a human-labeled instance into a prompt asking the LLM
//! for `k` rewrites that keep the label. Responses are parsed leniently
//! ([`parse_variations`]) and filtered for duplicates and, optionally,
//! confident learner disagreement ([`filter_variations`]).

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{dedup_key, Instance, Taxonomy};
use crate::error::{Error, Result};
use crate::http::{bearer_from_env, JsonClient, RetryPolicy};
use crate::learner::ProbabilityModel;

const PLACEHOLDERS: [&str; 3] = ["{text}", "{label}", "{k}"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TemplateFile", into = "TemplateFile")]
pub struct Template {
    pub name: String,
    pub system_text: String,
    pub user_text: String,
    pub k: usize,
}

#[derive(Serialize, Deserialize)]
struct TemplateFile {
    name: String,
    system_text: String,
    user_text: String,
    #[serde(default = "default_k")]
    k: usize,
}

fn default_k() -> usize {
    5
}

impl TryFrom<TemplateFile> for Template {
    type Error = Error;

    fn try_from(f: TemplateFile) -> Result<Self> {
        Template::new(f.name, f.system_text, f.user_text, f.k)
    }
}

impl From<Template> for TemplateFile {
    fn from(t: Template) -> Self {
        TemplateFile {
            name: t.name,
            system_text: t.system_text,
            user_text: t.user_text,
            k: t.k,
        }
    }
}

const DEFAULT_TEMPLATE: &str = include_str!("../templates/safety_variation.json");

impl Template {
    pub fn new(name: impl Into<String>, system_text: impl Into<String>, user_text: impl Into<String>, k: usize) -> Result<Self> {
        let user_text = user_text.into();
        for ph in PLACEHOLDERS {
            let count = user_text.matches(ph).count();
            if count != 1 {
                return Err(Error::Template(format!(
                    "user_text must contain {ph} exactly once (found {count})"
                )));
            }
        }
        if k == 0 {
            return Err(Error::Template("k must be positive".into()));
        }
        Ok(Template {
            name: name.into(),
            system_text: system_text.into(),
            user_text,
            k,
        })
    }

    /// The safety-variation template shipped in `templates/`.
    pub fn safety_default() -> Self {
        serde_json::from_str(DEFAULT_TEMPLATE).expect("bundled template is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&raw)?)
    }

    pub fn with_k(mut self, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Template("k must be positive".into()));
        }
        self.k = k;
        Ok(self)
    }
}

impl Default for Template {
    fn default() -> Self {
        Template::safety_default()
    }
}

/// A rendered prompt plus the inputs the offline mock needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub system: String,
    pub user: String,
    pub source_text: String,
    pub k: usize,
}

/// Replaces placeholders in one left-to-right pass; substituted values are
/// never re-scanned.
fn substitute(template: &str, text: &str, label: &str, k: usize) -> String {
    let k = k.to_string();
    let mut out = String::with_capacity(template.len() + text.len());
    let mut rest = template;
    while let Some(pos) = rest.find('{') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        let hit = [("{text}", text), ("{label}", label), ("{k}", k.as_str())]
            .into_iter()
            .find(|(ph, _)| tail.starts_with(ph));
        match hit {
            Some((ph, value)) => {
                out.push_str(value);
                rest = &tail[ph.len()..];
            }
            None => {
                out.push('{');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

pub fn render(t: &Template, x: &Instance, label: &str, taxonomy: &Taxonomy) -> Result<Prompt> {
    if x.text.is_empty() {
        return Err(Error::invalid(format!("instance `{}` has empty text", x.id)));
    }
    taxonomy.require(label)?;
    let mut user = substitute(&t.user_text, &x.text, label, t.k);
    let noun = if t.k == 1 { "string" } else { "strings" };
    user.push_str(&format!(
        "\n\nRespond with only a JSON array of exactly {} {noun}. Each string must be a distinct variation of the text above that still belongs to the class \"{label}\".",
        t.k
    ));
    Ok(Prompt {
        system: substitute(&t.system_text, &x.text, label, t.k),
        user,
        source_text: x.text.clone(),
        k: t.k,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    /// Full chat-completions URL.
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_retries: u32,
    pub timeout_secs: u64,
    pub backoff_base_ms: u64,
    /// Answer locally with the deterministic mock instead of calling out.
    pub mock: bool,
    pub api_key_env: String,
    /// Concurrent generation requests within one iteration.
    pub parallelism: usize,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-3.5-turbo".into(),
            temperature: 0.7,
            max_retries: 3,
            timeout_secs: 60,
            backoff_base_ms: 1000,
            mock: false,
            api_key_env: "ALGUIDE_LLM_API_KEY".into(),
            parallelism: 4,
        }
    }
}

impl LlmConfig {
    pub fn mock() -> Self {
        LlmConfig {
            mock: true,
            ..LlmConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid("temperature must be >= 0"));
        }
        if self.parallelism == 0 {
            return Err(Error::invalid("parallelism must be positive"));
        }
        Ok(())
    }
}

/// Deterministic offline response: `["variation 1: <text>", ...]`.
pub fn mock_response(prompt: &Prompt) -> String {
    let items: Vec<String> = (1..=prompt.k)
        .map(|i| format!("variation {i}: {}", prompt.source_text))
        .collect();
    serde_json::to_string(&items).expect("strings serialize")
}

/// Chat-completions client.
pub struct LlmClient {
    config: LlmConfig,
    http: Option<JsonClient>,
}

impl LlmClient {
    pub fn new(config: LlmConfig) -> Self {
        let http = (!config.mock).then(|| {
            JsonClient::new(
                RetryPolicy {
                    max_retries: config.max_retries,
                    base_delay_ms: config.backoff_base_ms,
                    timeout_secs: config.timeout_secs,
                },
                bearer_from_env(&config.api_key_env),
            )
        });
        LlmClient { config, http }
    }

    pub fn config(&self) -> &LlmConfig {
        &self.config
    }

    /// Returns the first choice's message content.
    pub fn complete(&self, prompt: &Prompt) -> Result<String> {
        let Some(http) = &self.http else {
            return Ok(mock_response(prompt));
        };
        let body = serde_json::json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [
                { "role": "system", "content": prompt.system },
                { "role": "user", "content": prompt.user },
            ],
        });
        let value = http.post_ok(&self.config.endpoint, &body)?;
        value
            .pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| Error::Protocol("chat completion has no choices[0].message.content".into()))
    }
}

pub fn call_llm(cfg: &LlmConfig, prompt: &Prompt) -> Result<String> {
    LlmClient::new(cfg.clone()).complete(prompt)
}

/// Parsed variations plus how many were missing relative to `k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Parsed {
    pub variations: Vec<String>,
    pub deficit: usize,
}

fn first_string_array(response: &str) -> Option<Vec<String>> {
    for (pos, _) in response.match_indices('[') {
        let mut stream = serde_json::Deserializer::from_str(&response[pos..]).into_iter::<Vec<String>>();
        if let Some(Ok(items)) = stream.next() {
            if !items.is_empty() {
                return Some(items);
            }
        }
    }
    None
}

fn enumerated_item(line: &str) -> Option<String> {
    let line = line.trim();
    let rest = if let Some(r) = line.strip_prefix(['-', '*', '•']) {
        r
    } else {
        let digits = line.chars().take_while(char::is_ascii_digit).count();
        if digits == 0 {
            return None;
        }
        line[digits..].strip_prefix(['.', ')'])?
    };
    let item = rest.trim().trim_matches('"').trim();
    (!item.is_empty()).then(|| item.to_string())
}

/// First JSON array of strings in the response, else enumerated lines
/// (`1.`, `2)`, `-`). Truncated to `k`.
pub fn parse_variations(response: &str, k: usize) -> Result<Parsed> {
    let mut items = first_string_array(response)
        .unwrap_or_else(|| response.lines().filter_map(enumerated_item).collect());
    if items.is_empty() {
        return Err(Error::Unparseable);
    }
    items.truncate(k);
    let deficit = k - items.len();
    if deficit > 0 {
        log::warn!("generation returned {} of {k} variations", items.len());
    }
    Ok(Parsed {
        variations: items,
        deficit,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationMode {
    /// Variations take the parent's human label.
    #[default]
    Inherit,
    /// As `Inherit`, but a confident contrary learner prediction vetoes.
    LearnerConsistent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variation {
    pub text: String,
    pub parent_id: String,
    pub label: String,
    pub relation_ok: bool,
}

/// Outcome counts for one parent's candidates.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterStats {
    pub empty: usize,
    pub duplicates: usize,
    pub vetoed: usize,
}

/// Drops empty and duplicate candidates (by [`dedup_key`] against the
/// parent, `existing` keys and earlier candidates) and, in
/// `LearnerConsistent` mode, candidates the model confidently assigns
/// elsewhere (`argmax != label` and `max > threshold`).
pub fn filter_variations(
    cands: &[String],
    parent: &Instance,
    label: &str,
    existing: &HashSet<String>,
    mode: RelationMode,
    model: Option<&dyn ProbabilityModel>,
    threshold: f64,
    taxonomy: &Taxonomy,
) -> Result<(Vec<Variation>, FilterStats)> {
    let label_index = taxonomy.require(label)?;
    let model = match (mode, model) {
        (RelationMode::LearnerConsistent, None) => {
            return Err(Error::invalid("learner_consistent filtering needs a learner"))
        }
        (RelationMode::LearnerConsistent, Some(m)) => Some(m),
        (RelationMode::Inherit, _) => None,
    };
    let mut stats = FilterStats::default();
    let mut seen: HashSet<String> = HashSet::from([dedup_key(&parent.text)]);
    let mut survivors = Vec::new();
    for cand in cands {
        let key = dedup_key(cand);
        if key.is_empty() {
            stats.empty += 1;
            continue;
        }
        if existing.contains(&key) || !seen.insert(key) {
            stats.duplicates += 1;
            continue;
        }
        survivors.push(cand.trim().to_string());
    }
    let verdicts: Vec<bool> = match model {
        Some(m) if !survivors.is_empty() => {
            let refs: Vec<&str> = survivors.iter().map(String::as_str).collect();
            m.predict_texts(&refs)?
                .iter()
                .map(|p| !(p.argmax() != label_index && p.max() > threshold))
                .collect()
        }
        _ => vec![true; survivors.len()],
    };
    let mut out = Vec::new();
    for (text, ok) in survivors.into_iter().zip(verdicts) {
        if !ok {
            stats.vetoed += 1;
            continue;
        }
        out.push(Variation {
            text,
            parent_id: parent.id.clone(),
            label: label.to_string(),
            relation_ok: true,
        });
    }
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::ClassProbabilities;

    fn parent() -> Instance {
        Instance::labeled("p", "Feeling depressed again", "Self-Harm")
    }

    #[test]
    fn template_validation() {
        assert!(Template::new("t", "", "{text} {label}", 5).is_err());
        assert!(Template::new("t", "", "{text} {text} {label} {k}", 5).is_err());
        assert!(Template::new("t", "", "{text} {label} {k}", 0).is_err());
        let t = Template::safety_default();
        assert_eq!(t.k, 5);
        let bad = r#"{"name":"x","system_text":"","user_text":"{text}","k":2}"#;
        assert!(serde_json::from_str::<Template>(bad).is_err());
    }

    #[test]
    fn render_substitutes_everything() {
        let tax = Taxonomy::default();
        let p = render(&Template::safety_default(), &parent(), "Self-Harm", &tax).unwrap();
        assert!(p.user.contains("Feeling depressed again"));
        assert!(p.user.contains("Self-Harm"));
        assert!(p.user.contains("exactly 5 strings"));
        assert!(!p.user.contains("{text}") && !p.user.contains("{label}") && !p.user.contains("{k}"));

        let one = Template::safety_default().with_k(1).unwrap();
        let p = render(&one, &parent(), "Self-Harm", &tax).unwrap();
        assert!(p.user.contains("exactly 1 string."));
        assert!(render(&one, &parent(), "Nope", &tax).is_err());
    }

    #[test]
    fn substitution_is_single_pass() {
        let t = Template::new("t", "", "text={text} label={label} k={k} {other}", 2).unwrap();
        let x = Instance::labeled("p", "see {label} and {k}", "Self-Harm");
        let p = render(&t, &x, "Self-Harm", &Taxonomy::default()).unwrap();
        assert!(p.user.starts_with("text=see {label} and {k} label=Self-Harm k=2 {other}"));
    }

    #[test]
    fn mock_round_trip_yields_k() {
        let p = render(&Template::safety_default(), &parent(), "Self-Harm", &Taxonomy::default()).unwrap();
        let raw = call_llm(&LlmConfig::mock(), &p).unwrap();
        let parsed = parse_variations(&raw, 5).unwrap();
        assert_eq!(parsed.variations.len(), 5);
        assert_eq!(parsed.variations[0], "variation 1: Feeling depressed again");
        assert_eq!(parsed.deficit, 0);
    }

    #[test]
    fn parse_rules() {
        assert_eq!(parse_variations(r#"["a","b","c"]"#, 3).unwrap().variations, vec!["a", "b", "c"]);
        let p = parse_variations("1. a\n2. b", 5).unwrap();
        assert_eq!((p.variations, p.deficit), (vec!["a".to_string(), "b".to_string()], 3));
        assert!(matches!(parse_variations("I cannot help with that.", 5), Err(Error::Unparseable)));
        let p = parse_variations("Sure! Here you go:\n[\"x\", \"y\", \"z\"]\nHope it helps [1]", 2).unwrap();
        assert_eq!(p.variations, vec!["x", "y"]);
        let p = parse_variations("- one\n* two\n3) three\nnot a list", 5).unwrap();
        assert_eq!(p.variations, vec!["one", "two", "three"]);
        assert!(parse_variations("[]", 3).is_err());
    }

    #[test]
    fn filter_dedups() {
        let tax = Taxonomy::default();
        let cands: Vec<String> = ["x", "x", "y", "  FEELING depressed   again", "", "z"].iter().map(|s| s.to_string()).collect();
        let existing = HashSet::from(["z".to_string()]);
        let (out, stats) =
            filter_variations(&cands, &parent(), "Self-Harm", &existing, RelationMode::Inherit, None, 0.9, &tax).unwrap();
        assert_eq!(out.iter().map(|v| v.text.as_str()).collect::<Vec<_>>(), vec!["x", "y"]);
        assert!(out.iter().all(|v| v.label == "Self-Harm" && v.relation_ok && v.parent_id == "p"));
        assert_eq!(stats, FilterStats { empty: 1, duplicates: 3, vetoed: 0 });
    }

    struct Confident(usize, f64);

    impl ProbabilityModel for Confident {
        fn predict_texts(&self, texts: &[&str]) -> Result<Vec<ClassProbabilities>> {
            let mut row = vec![(1.0 - self.1) / 5.0; 6];
            row[self.0] = self.1;
            Ok(texts.iter().map(|_| ClassProbabilities::from_untrusted(row.clone()).unwrap()).collect())
        }
    }

    #[test]
    fn learner_veto_only_when_confident() {
        let tax = Taxonomy::default();
        let cands = vec!["a".to_string(), "b".to_string()];
        let none = HashSet::new();
        let mode = RelationMode::LearnerConsistent;
        assert!(filter_variations(&cands, &parent(), "Self-Harm", &none, mode, None, 0.9, &tax).is_err());
        let sure_other = Confident(3, 0.95);
        let (out, stats) = filter_variations(&cands, &parent(), "Self-Harm", &none, mode, Some(&sure_other), 0.9, &tax).unwrap();
        assert!(out.is_empty());
        assert_eq!(stats.vetoed, 2);
        let unsure_other = Confident(3, 0.6);
        let (out, _) = filter_variations(&cands, &parent(), "Self-Harm", &none, mode, Some(&unsure_other), 0.9, &tax).unwrap();
        assert_eq!(out.len(), 2);
        let sure_same = Confident(0, 0.99);
        let (out, _) = filter_variations(&cands, &parent(), "Self-Harm", &none, mode, Some(&sure_same), 0.9, &tax).unwrap();
        assert_eq!(out.len(), 2);
    }
}
