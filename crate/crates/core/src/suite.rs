// SPDX-License-Identifier: MIT OR Apache-2.0

//! Prompt suite: licensed prepositional-phrase prompts, completion
//! classification and instrument/attribute/other proportions.
//!
//! Each item licenses two complements through a two-sentence context:
//!
//! ```text
//! A {subject} has a {subject_noun}. A {object} has a {object_noun}. The {subject} {verb} the {object} {preposition} a
//! ```
//!
//! The subject-associated noun is the instrument reading (attaches to the
//! verb); the object-associated noun is the attribute reading (attaches to
//! the object). The verb is stored inflected and inserted verbatim.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intervention::InterventionSpec;
use crate::model::Model;
use crate::tokenizer::{Vocab, EOS};

const SHIPPED_SUITE: &str = include_str!("../data/suite.json");

/// Function words every rendered prompt uses, in the order a word-level
/// vocabulary lists them.
const FUNCTION_PIECES: [&str; 8] = ["A", " A", " The", " has", " a", " the", ".", " an"];

fn default_preposition() -> String {
    "with".to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptItem {
    pub id: String,
    pub subject: String,
    /// Instrument candidate.
    pub subject_noun: String,
    pub object: String,
    /// Attribute candidate.
    pub object_noun: String,
    pub verb: String,
    #[serde(default = "default_preposition")]
    pub preposition: String,
}

/// The `(V, N, P, C)` view of an item; `C` is one of the two candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Quadruple<'a> {
    pub verb: &'a str,
    pub noun: &'a str,
    pub preposition: &'a str,
    pub complement: &'a str,
}

impl PromptItem {
    pub fn instrument(&self) -> &str {
        &self.subject_noun
    }

    pub fn attribute(&self) -> &str {
        &self.object_noun
    }

    pub fn quadruple(&self, class: Class) -> Option<Quadruple<'_>> {
        let complement = match class {
            Class::Instrument => self.instrument(),
            Class::Attribute => self.attribute(),
            Class::Other => return None,
        };
        Some(Quadruple {
            verb: &self.verb,
            noun: &self.object,
            preposition: &self.preposition,
            complement,
        })
    }

    fn validate(&self, row: usize) -> Result<()> {
        for (field, value) in [
            ("id", &self.id),
            ("subject", &self.subject),
            ("subject_noun", &self.subject_noun),
            ("object", &self.object),
            ("object_noun", &self.object_noun),
            ("verb", &self.verb),
            ("preposition", &self.preposition),
        ] {
            if value.trim().is_empty() {
                return Err(Error::Schema {
                    row,
                    detail: format!("field `{field}` is empty"),
                });
            }
        }
        if self.subject_noun.eq_ignore_ascii_case(&self.object_noun) {
            return Err(Error::Schema {
                row,
                detail: format!("instrument and attribute are both `{}`", self.subject_noun),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RenderOptions {
    /// Use "an" before vowel-initial nouns in the licensing sentences. The
    /// final "... with a" is always left as is.
    pub article_heuristic: bool,
}

fn article(word: &str, opts: RenderOptions, capital: bool) -> &'static str {
    let vowel = word
        .chars()
        .next()
        .is_some_and(|c| "aeiouAEIOU".contains(c));
    match (opts.article_heuristic && vowel, capital) {
        (true, true) => "An",
        (true, false) => "an",
        (false, true) => "A",
        (false, false) => "a",
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

pub fn render_prompt(item: &PromptItem) -> String {
    render_prompt_with(item, RenderOptions::default())
}

pub fn render_prompt_with(item: &PromptItem, opts: RenderOptions) -> String {
    let first = format!(
        "{} {} has {} {}.",
        article(&item.subject, opts, true),
        item.subject,
        article(&item.subject_noun, opts, false),
        item.subject_noun
    );
    let second = format!(
        "{} {} has {} {}.",
        article(&item.object, opts, true),
        item.object,
        article(&item.object_noun, opts, false),
        item.object_noun
    );
    let third = capitalize(&format!(
        "the {} {} the {} {} a",
        item.subject, item.verb, item.object, item.preposition
    ));
    format!("{first} {second} {third}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Class {
    Instrument,
    Attribute,
    Other,
}

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// First content word of a generated continuation: lowercased, articles
/// and surrounding punctuation removed.
pub fn first_word(text: &str) -> Option<String> {
    text.split_whitespace()
        .map(|w| {
            w.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|w| !w.is_empty())
        .find(|w| !ARTICLES.contains(&w.as_str()))
}

pub fn classify_completion(item: &PromptItem, generated_text: &str) -> Class {
    match first_word(generated_text) {
        Some(w) if w == item.instrument().to_lowercase() => Class::Instrument,
        Some(w) if w == item.attribute().to_lowercase() => Class::Attribute,
        _ => Class::Other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub instrument: usize,
    pub attribute: usize,
    pub other: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Proportions {
    pub instrument: f64,
    pub attribute: f64,
    pub other: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub id: String,
    pub prompt: String,
    pub completion: String,
    pub class: Class,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f32>,
    pub n: usize,
    pub counts: Counts,
    pub proportions: Proportions,
    pub items: Vec<ItemRecord>,
}

impl EvalResult {
    pub fn from_records(items: Vec<ItemRecord>, alpha: Option<f32>) -> Self {
        let mut counts = Counts::default();
        for r in &items {
            match r.class {
                Class::Instrument => counts.instrument += 1,
                Class::Attribute => counts.attribute += 1,
                Class::Other => counts.other += 1,
            }
        }
        let n = items.len();
        let frac = |c: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
        Self {
            alpha,
            n,
            counts,
            proportions: Proportions {
                instrument: frac(counts.instrument),
                attribute: frac(counts.attribute),
                other: frac(counts.other),
            },
            items,
        }
    }

    /// Most frequent class; instrument, then attribute, then other on ties.
    pub fn majority(&self) -> Class {
        let c = self.counts;
        if c.instrument >= c.attribute && c.instrument >= c.other {
            Class::Instrument
        } else if c.attribute >= c.other {
            Class::Attribute
        } else {
            Class::Other
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("eval result serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    /// Greedy generation budget per prompt.
    pub max_new_tokens: usize,
    pub render: RenderOptions,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            max_new_tokens: 4,
            render: RenderOptions::default(),
        }
    }
}

/// Renders, encodes and greedily completes one item.
pub fn complete_item(
    model: &Model,
    vocab: &Vocab,
    item: &PromptItem,
    interventions: &[InterventionSpec],
    opts: &EvalOptions,
) -> Result<ItemRecord> {
    let prompt = render_prompt_with(item, opts.render);
    let tokens = vocab.encode(&prompt);
    let generated =
        model.generate_greedy(&tokens, opts.max_new_tokens, interventions, Some(EOS))?;
    let completion = vocab.decode(&generated);
    let class = classify_completion(item, &completion);
    Ok(ItemRecord {
        id: item.id.clone(),
        prompt,
        completion,
        class,
    })
}

/// Completes every item (in parallel) and tallies the classes. Records keep
/// suite order.
pub fn evaluate(
    model: &Model,
    vocab: &Vocab,
    suite: &[PromptItem],
    interventions: &[InterventionSpec],
    opts: &EvalOptions,
) -> Result<EvalResult> {
    if suite.is_empty() {
        return Err(Error::EmptySuite);
    }
    let records = suite
        .par_iter()
        .map(|item| complete_item(model, vocab, item, interventions, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalResult::from_records(records, None))
}

fn check_items(items: &[PromptItem]) -> Result<()> {
    if items.is_empty() {
        return Err(Error::EmptySuite);
    }
    let mut ids = HashSet::new();
    for (i, item) in items.iter().enumerate() {
        item.validate(i + 1)?;
        if !ids.insert(item.id.as_str()) {
            return Err(Error::DuplicateId(item.id.clone()));
        }
    }
    Ok(())
}

/// Parses a JSON array of items; rows are numbered from 1 in errors.
pub fn parse_suite_json(text: &str) -> Result<Vec<PromptItem>> {
    let rows: Vec<serde_json::Value> = serde_json::from_str(text)?;
    let items = rows
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            serde_json::from_value(v).map_err(|e| Error::Schema {
                row: i + 1,
                detail: e.to_string(),
            })
        })
        .collect::<Result<Vec<PromptItem>>>()?;
    check_items(&items)?;
    Ok(items)
}

/// Parses CSV with a header row naming the item fields.
pub fn parse_suite_csv(text: &str) -> Result<Vec<PromptItem>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let items = rdr
        .deserialize::<PromptItem>()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| Error::Schema {
                row: i + 1,
                detail: e.to_string(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    check_items(&items)?;
    Ok(items)
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Loads a suite file; `.csv` files are read as CSV, anything else as JSON.
pub fn load_suite(path: impl AsRef<Path>) -> Result<Vec<PromptItem>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if is_csv(path) {
        parse_suite_csv(&text)
    } else {
        parse_suite_json(&text)
    }
}

pub fn suite_to_json(items: &[PromptItem]) -> String {
    serde_json::to_string_pretty(items).expect("items serialize") + "\n"
}

pub fn suite_to_csv(items: &[PromptItem]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for item in items {
        w.serialize(item)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::io("<csv>", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn save_suite(path: impl AsRef<Path>, items: &[PromptItem]) -> Result<()> {
    let path = path.as_ref();
    let text = if is_csv(path) {
        suite_to_csv(items)?
    } else {
        suite_to_json(items)
    };
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// The 100-item suite bundled with the crate.
pub fn shipped_suite() -> Vec<PromptItem> {
    parse_suite_json(SHIPPED_SUITE).expect("bundled suite is valid")
}

/// Raw JSON of the bundled suite.
pub fn shipped_suite_json() -> &'static str {
    SHIPPED_SUITE
}

/// Word-level vocabulary covering every word `items` can render: the
/// function words, then each preposition, then all content words (sorted),
/// each spelled with a leading space.
pub fn word_level_vocab(items: &[PromptItem]) -> Result<Vocab> {
    let mut words = BTreeSet::new();
    let mut preps = BTreeSet::new();
    for item in items {
        preps.insert(format!(" {}", item.preposition));
        for w in [
            &item.subject,
            &item.subject_noun,
            &item.object,
            &item.object_noun,
            &item.verb,
        ] {
            words.insert(format!(" {w}"));
        }
    }
    let pieces: Vec<String> = FUNCTION_PIECES
        .iter()
        .map(|s| s.to_string())
        .chain(preps)
        .chain(words)
        .collect();
    Vocab::word_level(pieces.iter().map(String::as_str))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn carpenter() -> PromptItem {
        PromptItem {
            id: "c".into(),
            subject: "carpenter".into(),
            subject_noun: "saw".into(),
            object: "beam".into(),
            object_noun: "notch".into(),
            verb: "cuts".into(),
            preposition: "with".into(),
        }
    }

    #[test]
    fn renders_template() {
        assert_eq!(
            render_prompt(&carpenter()),
            "A carpenter has a saw. A beam has a notch. The carpenter cuts the beam with a"
        );
    }

    #[test]
    fn renders_degenerate_subject_equals_object() {
        let mut it = carpenter();
        it.object = "carpenter".into();
        assert_eq!(
            render_prompt(&it),
            "A carpenter has a saw. A carpenter has a notch. The carpenter cuts the carpenter with a"
        );
    }

    #[test]
    fn article_heuristic_is_opt_in() {
        let mut it = carpenter();
        it.subject_noun = "axe".into();
        it.object = "egg".into();
        assert!(render_prompt(&it).contains("has a axe. A egg"));
        let r = render_prompt_with(
            &it,
            RenderOptions {
                article_heuristic: true,
            },
        );
        assert!(r.contains("has an axe. An egg"), "{r}");
        assert!(r.ends_with("with a"));
    }

    #[test]
    fn classify_examples() {
        let it = carpenter();
        assert_eq!(classify_completion(&it, " saw."), Class::Instrument);
        assert_eq!(classify_completion(&it, "Notch"), Class::Attribute);
        assert_eq!(classify_completion(&it, "hammer"), Class::Other);
        assert_eq!(classify_completion(&it, " the saw and"), Class::Instrument);
        assert_eq!(classify_completion(&it, ""), Class::Other);
        assert_eq!(classify_completion(&it, " sawdust"), Class::Other);
        assert_eq!(classify_completion(&it, "\"notch\","), Class::Attribute);
    }

    #[test]
    fn quadruple_view() {
        let it = carpenter();
        let q = it.quadruple(Class::Instrument).unwrap();
        assert_eq!(
            (q.verb, q.noun, q.preposition, q.complement),
            ("cuts", "beam", "with", "saw")
        );
        assert_eq!(it.quadruple(Class::Attribute).unwrap().complement, "notch");
        assert!(it.quadruple(Class::Other).is_none());
    }

    #[test]
    fn proportions_and_majority() {
        let rec = |c| ItemRecord {
            id: String::new(),
            prompt: String::new(),
            completion: String::new(),
            class: c,
        };
        let r = EvalResult::from_records(
            vec![
                rec(Class::Instrument),
                rec(Class::Attribute),
                rec(Class::Attribute),
            ],
            None,
        );
        assert_eq!(
            r.counts,
            Counts {
                instrument: 1,
                attribute: 2,
                other: 0
            }
        );
        let p = r.proportions;
        assert!((p.instrument + p.attribute + p.other - 1.0).abs() < 1e-12);
        assert_eq!(r.majority(), Class::Attribute);
    }

    #[test]
    fn schema_errors_name_the_row() {
        let text = r#"[
            {"id":"a","subject":"s","subject_noun":"i","object":"o","object_noun":"t","verb":"v"},
            {"id":"b","subject":"s","subject_noun":"i","object":"o","object_noun":"t"}
        ]"#;
        match parse_suite_json(text) {
            Err(Error::Schema { row, detail }) => {
                assert_eq!(row, 2);
                assert!(detail.contains("verb"), "{detail}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_duplicates_equal_candidates_and_empty() {
        let mut a = carpenter();
        let dup = vec![a.clone(), a.clone()];
        assert!(matches!(
            parse_suite_json(&suite_to_json(&dup)),
            Err(Error::DuplicateId(_))
        ));
        a.object_noun = "Saw".into();
        assert!(matches!(
            parse_suite_json(&suite_to_json(&[a])),
            Err(Error::Schema { row: 1, .. })
        ));
        assert!(matches!(parse_suite_json("[]"), Err(Error::EmptySuite)));
    }

    #[test]
    fn csv_and_json_roundtrip() {
        let items = shipped_suite();
        assert_eq!(
            parse_suite_csv(&suite_to_csv(&items).unwrap()).unwrap(),
            items
        );
        assert_eq!(parse_suite_json(&suite_to_json(&items)).unwrap(), items);
        let dir = tempfile::tempdir().unwrap();
        for name in ["s.json", "s.csv"] {
            let p = dir.path().join(name);
            save_suite(&p, &items).unwrap();
            assert_eq!(load_suite(&p).unwrap(), items);
        }
    }

    #[test]
    fn csv_default_preposition_and_missing_column() {
        let ok = "id,subject,subject_noun,object,object_noun,verb\nx,a,b,c,d,e\n";
        assert_eq!(parse_suite_csv(ok).unwrap()[0].preposition, "with");
        let bad = "id,subject,subject_noun,object,object_noun\nx,a,b,c,d\n";
        assert!(matches!(
            parse_suite_csv(bad),
            Err(Error::Schema { row: 1, .. })
        ));
    }

    #[test]
    fn word_level_vocab_covers_prompts() {
        let items = shipped_suite();
        let v = word_level_vocab(&items).unwrap();
        for it in &items {
            let ids = v.encode(&render_prompt(it));
            assert!(!ids.contains(&crate::tokenizer::UNK), "{}", it.id);
            assert_eq!(v.decode(&ids), render_prompt(it));
        }
    }
}
