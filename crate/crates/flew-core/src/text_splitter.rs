//! Splitting abstracts into background / method / result sections.
//!
//! The preferred route is a text-completion service: [`build_split_prompt`]
//! produces the instruction, [`parse_split_response`] enforces the reply
//! schema strictly, and [`validate_split`] gates acceptance on the original
//! text surviving the split (whitespace-normalized equality plus per-sentence
//! coverage). [`heuristic_split`] is the deterministic offline substitute: it
//! cuts the sentence list at cue-derived positions, so its output always
//! reassembles into the source abstract.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::facet_graph::Facet;

/// One abstract partitioned into its three facet sections. Sections may be
/// empty, but a split of a nonempty abstract has at least one nonempty
/// section (enforced by the producers, not the type).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FacetedAbstract {
    pub background: String,
    pub method: String,
    pub result: String,
}

impl FacetedAbstract {
    pub fn new(
        background: impl Into<String>,
        method: impl Into<String>,
        result: impl Into<String>,
    ) -> Self {
        FacetedAbstract {
            background: background.into(),
            method: method.into(),
            result: result.into(),
        }
    }

    pub fn section(&self, facet: Facet) -> &str {
        match facet {
            Facet::Background => &self.background,
            Facet::Method => &self.method,
            Facet::Result => &self.result,
        }
    }

    pub fn is_all_empty(&self) -> bool {
        self.background.is_empty() && self.method.is_empty() && self.result.is_empty()
    }
}

/// How a stored split was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    /// Returned by the splitting service and accepted by validation.
    Service,
    /// The service failed or was rejected; the heuristic stood in.
    Fallback,
    /// Produced directly by the offline heuristic.
    Heuristic,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Provenance::Service => "service",
            Provenance::Fallback => "fallback",
            Provenance::Heuristic => "heuristic",
        };
        f.write_str(s)
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "service" => Ok(Provenance::Service),
            "fallback" => Ok(Provenance::Fallback),
            "heuristic" => Ok(Provenance::Heuristic),
            other => Err(Error::Validation(format!(
                "unknown split provenance `{other}`"
            ))),
        }
    }
}

/// Validation outcome for one split. `intact` means the concatenated
/// sections reproduce the abstract; `coverage` means every sentence lands in
/// the sections exactly as often as it occurs in the abstract. Both hold if
/// and only if `diagnostics` is empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitReport {
    pub intact: bool,
    pub coverage: bool,
    pub diagnostics: Vec<String>,
}

impl SplitReport {
    pub fn is_ok(&self) -> bool {
        self.diagnostics.is_empty()
    }
}

const PROMPT_TEMPLATE: &str = "Here is the abstract of a scientific paper. Your task is to split the text into three distinct sections based on the content of sentences:\n\n1.Background: The context or previous knowledge related to the topic.\n\n2.Method: The methodology, approach, or contribution proposed in the paper.\n\n3.Result: The findings, outcomes, or conclusions derived from experiments or analysis.\n\nPlease return the output in a structured JSON format, as shown below:\n\n{\"background\": \"xxx\",\"method\": \"xxx\",\"result\": \"xxx\"}\n\nEnsure that the original text remains intact in each section and that every sentence is categorized appropriately.\n\nInput: \"[abstract]\"";

/// Renders the splitting instruction with `abstract_text` substituted into
/// the input slot. The abstract is inserted verbatim, quotes and all.
pub fn build_split_prompt(abstract_text: &str) -> Result<String> {
    if abstract_text.trim().is_empty() {
        return Err(Error::EmptyAbstract);
    }
    Ok(PROMPT_TEMPLATE.replace("[abstract]", abstract_text))
}

/// Parses a service reply: exactly one JSON object with string fields
/// `background`, `method`, `result`. Surrounding whitespace and a fenced
/// code block wrapper are tolerated; everything else is rejected with the
/// offending key named.
pub fn parse_split_response(raw: &str) -> Result<FacetedAbstract> {
    let body = strip_code_fence(raw.trim());
    let value: serde_json::Value = serde_json::from_str(body)
        .map_err(|e| Error::SplitResponse(format!("reply is not valid JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::SplitResponse("reply is not a JSON object".into()))?;

    for key in obj.keys() {
        if !matches!(key.as_str(), "background" | "method" | "result") {
            return Err(Error::SplitResponse(format!("unexpected key `{key}`")));
        }
    }
    let section = |key: &str| -> Result<String> {
        let v = obj
            .get(key)
            .ok_or_else(|| Error::SplitResponse(format!("missing key `{key}`")))?;
        v.as_str()
            .map(str::to_owned)
            .ok_or_else(|| Error::SplitResponse(format!("value for `{key}` is not a string")))
    };
    Ok(FacetedAbstract {
        background: section("background")?,
        method: section("method")?,
        result: section("result")?,
    })
}

fn strip_code_fence(s: &str) -> &str {
    let Some(rest) = s.strip_prefix("```") else {
        return s;
    };
    // Drop the info string (e.g. "json") up to the first newline, then the
    // closing fence.
    let body = match rest.split_once('\n') {
        Some((_, body)) => body,
        None => return s,
    };
    body.trim_end()
        .strip_suffix("```")
        .map(str::trim_end)
        .unwrap_or(body)
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Splits text into sentences. A boundary is a run of `.`, `!`, `?`
/// followed by whitespace and then an uppercase letter or a digit;
/// abbreviations are not special-cased. Sentences are trimmed; empty
/// fragments are dropped.
pub fn segment_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut sentences = Vec::new();
    let mut push = |slice: &[char]| {
        let s: String = slice.iter().collect();
        let t = s.trim();
        if !t.is_empty() {
            sentences.push(t.to_string());
        }
    };
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        if !matches!(chars[i], '.' | '!' | '?') {
            i += 1;
            continue;
        }
        let mut end = i + 1;
        while end < chars.len() && matches!(chars[end], '.' | '!' | '?') {
            end += 1;
        }
        let mut next = end;
        while next < chars.len() && chars[next].is_whitespace() {
            next += 1;
        }
        let boundary = next > end
            && next < chars.len()
            && (chars[next].is_uppercase() || chars[next].is_numeric());
        if boundary {
            push(&chars[start..end]);
            start = next;
            i = next;
        } else {
            i = end;
        }
    }
    push(&chars[start..]);
    sentences
}

/// Checks a split against its source abstract. Intactness compares the
/// whitespace-normalized concatenation of the sections to the normalized
/// abstract; coverage compares per-sentence occurrence counts, so a missing,
/// duplicated, or foreign sentence each produces a diagnostic.
pub fn validate_split(abstract_text: &str, split: &FacetedAbstract) -> SplitReport {
    let mut diagnostics = Vec::new();

    let joined = format!("{} {} {}", split.background, split.method, split.result);
    let intact = normalize_ws(&joined) == normalize_ws(abstract_text);
    if !intact {
        diagnostics.push("concatenated sections do not reproduce the abstract text".to_string());
    }

    let mut expected: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for s in segment_sentences(abstract_text) {
        expected.entry(normalize_ws(&s)).or_default().0 += 1;
    }
    for section in [&split.background, &split.method, &split.result] {
        for s in segment_sentences(section) {
            expected.entry(normalize_ws(&s)).or_default().1 += 1;
        }
    }
    let mut coverage = true;
    for (sentence, (in_abstract, in_sections)) in &expected {
        if in_abstract != in_sections {
            coverage = false;
            diagnostics.push(format!(
                "sentence `{sentence}` occurs {in_abstract} time(s) in the abstract \
                 but {in_sections} time(s) across the sections"
            ));
        }
    }

    SplitReport {
        intact,
        coverage,
        diagnostics,
    }
}

const METHOD_CUES: [&str; 5] = [
    "we propose",
    "we present",
    "we introduce",
    "our approach",
    "our method",
];
const RESULT_CUES: [&str; 5] = [
    "results show",
    "experiments demonstrate",
    "we achieve",
    "we find",
    "outperform",
];

fn has_cue(sentence: &str, cues: &[&str]) -> bool {
    let lower = sentence.to_lowercase();
    cues.iter().any(|c| lower.contains(c))
}

/// Deterministic offline splitter. Sentences are cut into three contiguous
/// runs: the method run starts at the first method-cue sentence and, when a
/// result cue occurs later, ends after the last method-cue sentence with
/// everything beyond it going to the result run; otherwise the method run
/// extends to the end. With result cues only, the result run starts at the
/// first of them. With no cues at all the sentence list is cut into
/// positional thirds. The output always passes [`validate_split`].
pub fn heuristic_split(abstract_text: &str) -> Result<FacetedAbstract> {
    let sentences = segment_sentences(abstract_text);
    if sentences.is_empty() {
        return Err(Error::EmptyAbstract);
    }
    let n = sentences.len();
    let method_at: Vec<usize> = (0..n)
        .filter(|&i| has_cue(&sentences[i], &METHOD_CUES))
        .collect();
    let result_at: Vec<usize> = (0..n)
        .filter(|&i| !method_at.contains(&i) && has_cue(&sentences[i], &RESULT_CUES))
        .collect();

    let (i, j) = match (method_at.first(), method_at.last()) {
        (Some(&m_first), Some(&m_last)) => {
            let j = if result_at.iter().any(|&r| r > m_last) {
                m_last + 1
            } else {
                n
            };
            (m_first, j)
        }
        _ => match result_at.first() {
            Some(&r_first) => (r_first, r_first),
            None => {
                let third = n.div_ceil(3);
                (third.min(n), (2 * third).min(n))
            }
        },
    };

    Ok(FacetedAbstract {
        background: sentences[..i].join(" "),
        method: sentences[i..j].join(" "),
        result: sentences[j..].join(" "),
    })
}

/// A single-turn text-completion endpoint used for splitting.
pub trait SplitClient {
    /// Sends one prompt and returns the raw reply text.
    fn complete(&self, prompt: &str) -> Result<String>;
}

/// Splits via the service, gating the reply on schema and validation. When
/// `fallback` is set, any transport, schema, or validation failure falls
/// back to [`heuristic_split`]; otherwise the failure propagates.
pub fn split_with_service<C: SplitClient + ?Sized>(
    abstract_text: &str,
    client: &C,
    fallback: bool,
) -> Result<(FacetedAbstract, Provenance)> {
    let prompt = build_split_prompt(abstract_text)?;
    let attempt = client.complete(&prompt).and_then(|raw| {
        let split = parse_split_response(&raw)?;
        let report = validate_split(abstract_text, &split);
        if report.is_ok() {
            Ok(split)
        } else {
            Err(Error::SplitRejected {
                diagnostics: report.diagnostics,
            })
        }
    });
    match attempt {
        Ok(split) => Ok((split, Provenance::Service)),
        Err(_) if fallback => Ok((heuristic_split(abstract_text)?, Provenance::Fallback)),
        Err(e) => Err(e),
    }
}

/// One stored split: sections plus how they were obtained.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub id: String,
    #[serde(flatten)]
    pub sections: FacetedAbstract,
    pub provenance: Provenance,
}

/// Splits keyed by paper id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SplitStore {
    map: BTreeMap<String, SplitRecord>,
}

impl SplitStore {
    pub fn new() -> Self {
        SplitStore::default()
    }

    pub fn insert(&mut self, record: SplitRecord) -> Result<()> {
        if record.id.is_empty() {
            return Err(Error::Validation("split record has an empty id".into()));
        }
        if self.map.contains_key(&record.id) {
            return Err(Error::Validation(format!(
                "duplicate split for paper `{}`",
                record.id
            )));
        }
        self.map.insert(record.id.clone(), record);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&SplitRecord> {
        self.map.get(id)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Records in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = &SplitRecord> {
        self.map.values()
    }
}

/// Writes one JSON object per record, in ascending id order.
pub fn write_splits_jsonl<W: Write>(store: &SplitStore, mut w: W) -> Result<()> {
    for record in store.iter() {
        serde_json::to_writer(&mut w, record).map_err(|e| Error::FileFormat(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a splits file strictly: any malformed line or duplicate id is an
/// error naming the 1-based line.
pub fn read_splits_jsonl<R: BufRead>(r: R) -> Result<SplitStore> {
    let mut store = SplitStore::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SplitRecord = serde_json::from_str(&line)
            .map_err(|e| Error::FileFormat(format!("splits line {}: {e}", idx + 1)))?;
        store
            .insert(record)
            .map_err(|e| Error::FileFormat(format!("splits line {}: {e}", idx + 1)))?;
    }
    Ok(store)
}
