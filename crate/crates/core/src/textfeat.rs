//! Response-level text features and the regression of opener scores on them.

use std::path::Path;
use std::sync::LazyLock;

use nalgebra::DMatrix;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::ols::{ols, OlsFit, VarianceKind};
use crate::scoring::chosen_model;

const BUILTIN_LEXICON: &str = include_str!("../data/lexicon.txt");

/// Regressor names in design order, after the intercept.
pub const FEATURES: [&str; 7] = [
    "text_length",
    "if_line_breaks",
    "if_question_marks",
    "if_enumeration",
    "if_deanthro",
    "if_refusal",
    "if_self_identification",
];

pub const INTERCEPT: &str = "intercept";

static LIST_ITEM: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*(?:\d+[.)]|[-*•])\s+\S").unwrap());

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    pub version: String,
    pub deanthro: Vec<String>,
    pub refusal: Vec<String>,
    pub self_identification: Vec<String>,
}

impl Lexicon {
    /// The lexicon bundled with the crate.
    pub fn builtin() -> Lexicon {
        Lexicon::parse(BUILTIN_LEXICON, "builtin lexicon").expect("bundled lexicon parses")
    }

    pub fn from_file(path: &Path) -> Result<Lexicon> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Lexicon::parse(&text, &path.display().to_string())
    }

    /// Sections `[deanthro]`, `[refusal]`, `[self_identification]`, one phrase
    /// per line. `#` starts a comment line; `version = ...` may precede the
    /// first section.
    pub fn parse(text: &str, source: &str) -> Result<Lexicon> {
        let mut lex = Lexicon {
            version: "unversioned".into(),
            deanthro: Vec::new(),
            refusal: Vec::new(),
            self_identification: Vec::new(),
        };
        let mut section: Option<&str> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                match name {
                    "deanthro" | "refusal" | "self_identification" => section = Some(name),
                    _ => return Err(Error::schema(source, i + 1, format!("unknown section [{name}]"))),
                }
                continue;
            }
            let Some(name) = section else {
                match line.split_once('=') {
                    Some((k, v)) if k.trim() == "version" => lex.version = v.trim().to_string(),
                    _ => return Err(Error::schema(source, i + 1, "phrase outside a section")),
                }
                continue;
            };
            let phrase = normalize(line);
            let list = match name {
                "deanthro" => &mut lex.deanthro,
                "refusal" => &mut lex.refusal,
                _ => &mut lex.self_identification,
            };
            if !list.contains(&phrase) {
                list.push(phrase);
            }
        }
        Ok(lex)
    }
}

/// Lowercase with typographic apostrophes folded to `'`.
fn normalize(text: &str) -> String {
    text.chars()
        .map(|c| match c {
            '\u{2018}' | '\u{2019}' | '\u{02bc}' => '\'',
            c => c,
        })
        .flat_map(char::to_lowercase)
        .collect()
}

fn is_word(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Whether `phrase` occurs in `text` without a word character on either side.
fn contains_phrase(text: &str, phrase: &str) -> bool {
    text.match_indices(phrase).any(|(at, m)| {
        let before = text[..at].chars().next_back();
        let after = text[at + m.len()..].chars().next();
        let open = !phrase.starts_with(is_word) || !before.is_some_and(is_word);
        let close = !phrase.ends_with(is_word) || !after.is_some_and(is_word);
        open && close
    })
}

fn matches_any(text: &str, phrases: &[String]) -> bool {
    phrases.iter().any(|p| contains_phrase(text, p))
}

/// Two adjacent non-blank lines that both open with a number or bullet.
fn has_enumeration(text: &str) -> bool {
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    lines
        .windows(2)
        .any(|w| LIST_ITEM.is_match(w[0]) && LIST_ITEM.is_match(w[1]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub utterance_id: String,
    pub model: String,
    /// Unicode scalar values.
    pub text_length: usize,
    pub if_line_breaks: bool,
    /// Last non-whitespace character is `?`.
    pub if_question_marks: bool,
    pub if_enumeration: bool,
    pub if_deanthro: bool,
    pub if_refusal: bool,
    pub if_self_identification: bool,
    pub score: f64,
}

impl FeatureRow {
    /// Regressor values in `FEATURES` order.
    pub fn values(&self) -> [f64; 7] {
        let b = |x: bool| if x { 1.0 } else { 0.0 };
        [
            self.text_length as f64,
            b(self.if_line_breaks),
            b(self.if_question_marks),
            b(self.if_enumeration),
            b(self.if_deanthro),
            b(self.if_refusal),
            b(self.if_self_identification),
        ]
    }
}

pub fn extract_features(utterance_id: &str, model: &str, text: &str, score: f64, lexicon: &Lexicon) -> FeatureRow {
    let folded = normalize(text);
    FeatureRow {
        utterance_id: utterance_id.to_string(),
        model: model.to_string(),
        text_length: text.chars().count(),
        if_line_breaks: text.contains('\n'),
        if_question_marks: text.trim_end().ends_with('?'),
        if_enumeration: has_enumeration(text),
        if_deanthro: matches_any(&folded, &lexicon.deanthro),
        if_refusal: matches_any(&folded, &lexicon.refusal),
        if_self_identification: matches_any(&folded, &lexicon.self_identification),
        score,
    }
}

/// Feature rows for every opening-turn response, in corpus order.
pub fn opener_features(corpus: &Corpus, lexicon: &Lexicon) -> Vec<FeatureRow> {
    let responses: Vec<_> = corpus
        .conversations()
        .iter()
        .filter_map(|c| c.opener())
        .flat_map(|o| &o.responses)
        .collect();
    responses
        .par_iter()
        .map(|r| extract_features(&r.utterance_id, &r.model_name, &r.response_text, r.score, lexicon))
        .collect()
}

/// OLS of score on an intercept and the seven features with
/// heteroskedasticity-robust errors. Constant features are dropped.
pub fn score_regression(rows: &[FeatureRow]) -> Result<OlsFit> {
    if rows.len() < 2 {
        return Err(Error::invalid(format!("need at least 2 rows, got {}", rows.len())));
    }
    let values: Vec<[f64; 7]> = rows.iter().map(FeatureRow::values).collect();
    let x = DMatrix::from_fn(rows.len(), 8, |i, j| if j == 0 { 1.0 } else { values[i][j - 1] });
    let names: Vec<String> = std::iter::once(INTERCEPT).chain(FEATURES).map(String::from).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.score).collect();
    ols(x, &names, &y, None, VarianceKind::Hc1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefusalChoice {
    /// Conversations with a scored opening turn.
    pub conversations: usize,
    /// Of those, openers with at least one refusing response.
    pub with_refusal: usize,
    /// Of those, openers where every response refuses.
    pub all_refusing: usize,
    /// Openers with a refusal where the chosen model did not refuse.
    pub non_refuser_chosen: usize,
    pub share_with_refusal: Option<f64>,
    pub non_refuser_share: Option<f64>,
}

/// How often a non-refusing model is chosen when at least one opening
/// response refuses.
pub fn refusal_choice(corpus: &Corpus, lexicon: &Lexicon, seed: u64) -> RefusalChoice {
    let mut out = RefusalChoice {
        conversations: 0,
        with_refusal: 0,
        all_refusing: 0,
        non_refuser_chosen: 0,
        share_with_refusal: None,
        non_refuser_share: None,
    };
    for c in corpus.conversations() {
        let Some(chosen) = chosen_model(c, seed) else { continue };
        let opener = c.opener().expect("chosen model implies an opener");
        out.conversations += 1;
        let refuses: Vec<bool> = opener
            .responses
            .iter()
            .map(|r| matches_any(&normalize(&r.response_text), &lexicon.refusal))
            .collect();
        if !refuses.contains(&true) {
            continue;
        }
        out.with_refusal += 1;
        if refuses.iter().all(|&r| r) {
            out.all_refusing += 1;
        }
        let chosen_refuses = opener
            .responses
            .iter()
            .zip(&refuses)
            .any(|(r, &f)| r.model_name == chosen.model && f);
        if !chosen_refuses {
            out.non_refuser_chosen += 1;
        }
    }
    let share = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    out.share_with_refusal = share(out.with_refusal, out.conversations);
    out.non_refuser_share = share(out.non_refuser_chosen, out.with_refusal);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::*;
    use crate::corpus::{ConversationType, Participant};
    use crate::rng::keyed_rng;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn row(text: &str) -> FeatureRow {
        extract_features("u", "m", text, 0.0, &Lexicon::builtin())
    }

    #[test]
    fn builtin_lexicon_loads() {
        let lex = Lexicon::builtin();
        assert_eq!(lex.version, "1");
        assert!(lex.refusal.iter().any(|p| p == "i cannot engage with"));
        assert!(!lex.deanthro.is_empty() && !lex.self_identification.is_empty());
    }

    #[test]
    fn refusal_example() {
        let r = row("Sorry I cannot engage.");
        assert!(r.if_refusal);
        assert!(!r.if_question_marks && !r.if_line_breaks);
    }

    #[test]
    fn empty_text_has_no_flags() {
        let r = row("");
        assert_eq!(r.text_length, 0);
        assert_eq!(r.values(), [0.0; 7]);
    }

    #[test]
    fn numbered_list() {
        let r = row("1. apples\n2. pears");
        assert!(r.if_enumeration && r.if_line_breaks);
        assert_eq!(r.text_length, 18);
    }

    #[test]
    fn bullets_and_crlf() {
        let r = row("Options:\r\n- tea\r\n\r\n- coffee");
        assert!(r.if_enumeration && r.if_line_breaks);
        assert!(!row("- only one item\nthen prose").if_enumeration);
        assert!(!row("-5 degrees\n-3 degrees").if_enumeration);
    }

    #[test]
    fn question_mark_is_last_character() {
        assert!(row("What do you think?").if_question_marks);
        assert!(row("What do you think?  \n").if_question_marks);
        assert!(!row("Why? Because.").if_question_marks);
    }

    #[test]
    fn curly_apostrophes_and_case() {
        let r = row("AS AN AI LANGUAGE MODEL, I don\u{2019}t hold personal opinions.");
        assert!(r.if_deanthro && r.if_refusal);
    }

    #[test]
    fn names_match_on_word_boundaries() {
        assert!(row("I am Claude, made by Anthropic.").if_self_identification);
        assert!(!row("Claudette went home.").if_self_identification);
        assert!(row("I was trained by OpenAI's team").if_self_identification);
    }

    #[test]
    fn length_counts_characters() {
        assert_eq!(row("héllo").text_length, 5);
    }

    #[test]
    fn parse_rejects_unknown_section() {
        assert!(Lexicon::parse("[nope]\nx\n", "t").is_err());
        assert!(Lexicon::parse("stray\n", "t").is_err());
    }

    fn synthetic(n: usize, seed: u64) -> Vec<FeatureRow> {
        let mut rng = keyed_rng(seed, b"rows");
        (0..n)
            .map(|i| FeatureRow {
                utterance_id: format!("u{i}"),
                model: "m".into(),
                text_length: rng.random_range(10..2000),
                if_line_breaks: rng.random(),
                if_question_marks: rng.random(),
                if_enumeration: rng.random(),
                if_deanthro: rng.random(),
                if_refusal: rng.random(),
                if_self_identification: rng.random(),
                score: 0.0,
            })
            .collect()
    }

    #[test]
    fn exact_length_fit() {
        let mut rows = synthetic(200, 1);
        for r in &mut rows {
            r.score = 50.0 + 0.03 * r.text_length as f64;
        }
        let fit = score_regression(&rows).unwrap();
        assert!((fit.coefficient("text_length").unwrap().0 - 0.03).abs() < 1e-10);
        assert!((fit.coefficient(INTERCEPT).unwrap().0 - 50.0).abs() < 1e-8);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
        assert_eq!(fit.variance, VarianceKind::Hc1);
    }

    #[test]
    fn constant_feature_dropped() {
        let mut rows = synthetic(50, 2);
        for r in &mut rows {
            r.if_deanthro = false;
            r.score = r.text_length as f64;
        }
        let fit = score_regression(&rows).unwrap();
        assert_eq!(fit.dropped, vec!["if_deanthro"]);
        assert!(fit.coefficient("if_deanthro").is_none());
    }

    #[test]
    fn shuffled_scores_explain_little() {
        let mut rows = synthetic(5000, 3);
        let mut rng = keyed_rng(3, b"noise");
        for r in &mut rows {
            r.score = 20.0 + 0.02 * r.text_length as f64 - 8.0 * f64::from(u8::from(r.if_refusal))
                + rng.random_range(-30.0..30.0);
        }
        assert!(score_regression(&rows).unwrap().r2 > 0.1);
        let mut scores: Vec<f64> = rows.iter().map(|r| r.score).collect();
        scores.shuffle(&mut rng);
        for (r, s) in rows.iter_mut().zip(scores) {
            r.score = s;
        }
        assert!(score_regression(&rows).unwrap().r2 < 0.005);
    }

    #[test]
    fn refusal_choice_counts() {
        let ps: Vec<Participant> = vec![participant("u1", "Male")];
        let mut c1 = conversation("c1", "u1", ConversationType::Unguided, &[("a", 80.0), ("b", 20.0)]);
        c1.turns[0].responses[1].response_text = "I'm sorry, but I can't.".into();
        let mut c2 = conversation("c2", "u1", ConversationType::Unguided, &[("a", 10.0), ("b", 90.0)]);
        c2.turns[0].responses[1].response_text = "I cannot engage with that.".into();
        let c3 = conversation("c3", "u1", ConversationType::Unguided, &[("a", 10.0), ("b", 90.0)]);
        let corpus = Corpus::new(ps, vec![c1, c2, c3]).unwrap();
        let stat = refusal_choice(&corpus, &Lexicon::builtin(), 0);
        assert_eq!(stat.conversations, 3);
        assert_eq!(stat.with_refusal, 2);
        assert_eq!(stat.non_refuser_chosen, 1);
        assert_eq!(stat.non_refuser_share, Some(0.5));
    }
}
