//! Deterministic knowledge-injection detection: does a rewritten query
//! contain an answer span that the original query did not?
//!
//! Matching is on token sequences (see [`tokenize`]). "Not derivable from
//! the original" is approximated by literal absence from it, so this flags
//! strictly fewer queries than a semantic judge would.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{contains_sequence, tokenize};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum InjectionError {
    #[error("injection report needs at least one item")]
    EmptyDataset,
    #[error("item `{0}` has no answer candidates")]
    NoCandidates(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Detection {
    /// Normalized candidate spans present in the generated query only.
    pub injected: Vec<String>,
    pub flag: bool,
}

pub fn detect_injection<S: AsRef<str>>(original: &str, generated: &str, candidates: &[S]) -> Detection {
    let orig = tokenize(original);
    let generated = tokenize(generated);
    let mut injected: Vec<String> = Vec::new();
    for c in candidates {
        let needle = tokenize(c.as_ref());
        let span = needle.join(" ");
        if contains_sequence(&generated, &needle) && !contains_sequence(&orig, &needle) && !injected.contains(&span) {
            injected.push(span);
        }
    }
    Detection { flag: !injected.is_empty(), injected }
}

/// Byte range and lowercase text of every token, in order.
fn token_spans(text: &str) -> Vec<(usize, usize, String)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_alphanumeric(), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i, text[s..i].to_lowercase()));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, text.len(), text[s..].to_lowercase()));
    }
    out
}

/// Removes every occurrence of the injected spans, leftmost first (ties go
/// to the earlier span in `injected`), then collapses whitespace.
///
/// Removal cuts between non-alphanumeric characters, so surviving tokens
/// never merge. It can, however, bring two tokens together that form a
/// different candidate; [`clean_to_fixpoint`] handles that case.
pub fn clean_query<S: AsRef<str>>(generated: &str, injected: &[S]) -> String {
    let needles: Vec<Vec<String>> =
        injected.iter().map(|s| tokenize(s.as_ref())).filter(|n| !n.is_empty()).collect();
    let mut text = generated.to_owned();
    loop {
        let spans = token_spans(&text);
        let tokens: Vec<&str> = spans.iter().map(|(_, _, t)| t.as_str()).collect();
        let mut best: Option<(usize, usize)> = None;
        for needle in &needles {
            let hit = tokens.windows(needle.len()).position(|w| w.iter().zip(needle).all(|(a, b)| a == b));
            if let Some(p) = hit {
                if best.is_none_or(|(bp, _)| p < bp) {
                    best = Some((p, needle.len()));
                }
            }
        }
        let Some((p, len)) = best else { break };
        let (from, to) = (spans[p].0, spans[p + len - 1].1);
        text.replace_range(from..to, " ");
    }
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Detect-then-clean until nothing is flagged. The result never triggers
/// [`detect_injection`] against the same original and candidates.
pub fn clean_to_fixpoint<S: AsRef<str>>(original: &str, generated: &str, candidates: &[S]) -> String {
    let mut text = clean_query(generated, &[] as &[&str]);
    loop {
        let d = detect_injection(original, &text, candidates);
        if !d.flag {
            return text;
        }
        text = clean_query(&text, &d.injected);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionItem {
    pub id: String,
    pub original: String,
    pub generated: String,
    pub candidates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemReport {
    pub id: String,
    pub flag: bool,
    pub injected: Vec<String>,
    pub cleaned: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionReport {
    pub rate: f64,
    pub items: Vec<ItemReport>,
}

pub fn injection_report(items: &[InjectionItem]) -> Result<InjectionReport, InjectionError> {
    if items.is_empty() {
        return Err(InjectionError::EmptyDataset);
    }
    let mut reports = Vec::with_capacity(items.len());
    for item in items {
        if item.candidates.is_empty() {
            return Err(InjectionError::NoCandidates(item.id.clone()));
        }
        let d = detect_injection(&item.original, &item.generated, &item.candidates);
        let cleaned = clean_to_fixpoint(&item.original, &item.generated, &item.candidates);
        reports.push(ItemReport { id: item.id.clone(), flag: d.flag, injected: d.injected, cleaned });
    }
    let flagged = reports.iter().filter(|r| r.flag).count();
    Ok(InjectionReport { rate: flagged as f64 / reports.len() as f64, items: reports })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detection() {
        let orig = "another term for the pivot mounting";
        assert!(!detect_injection(orig, orig, &["trunnion"]).flag);
        let d = detect_injection(orig, "pivot mounting OR trunnion", &["trunnion"]);
        assert_eq!(d.injected, ["trunnion"]);
        assert!(!detect_injection("pivot", "pivot AND mounting", &["pivot"]).flag);
    }

    #[test]
    fn cleaning() {
        assert_eq!(clean_query("pivot mounting OR trunnion", &["trunnion"]), "pivot mounting OR");
        assert_eq!(clean_query("a  b", &[] as &[&str]), "a b");
        // Overlapping spans: "b c" starts first and wins, "c d" is then gone too.
        let cleaned = clean_query("a b c d", &["c d", "b c"]);
        assert_eq!(cleaned, "a d");
        assert!(!detect_injection("", &cleaned, &["c d", "b c"]).flag);
        assert_eq!(clean_query("(x AND Trunnion-Mount)", &["trunnion mount"]), "(x AND )");
    }

    #[test]
    fn fixpoint_handles_new_adjacency() {
        let once = clean_query("a x b", &["x"]);
        assert_eq!(once, "a b");
        assert!(detect_injection("", &once, &["x", "a b"]).flag);
        let fixed = clean_to_fixpoint("", "a x b", &["x", "a b"]);
        assert_eq!(fixed, "");
        assert!(!detect_injection("", &fixed, &["x", "a b"]).flag);
    }

    #[test]
    fn report() {
        let item = |id: &str, g: &str| InjectionItem {
            id: id.into(),
            original: "pivot mounting".into(),
            generated: g.into(),
            candidates: vec!["trunnion".into()],
        };
        let r = injection_report(&[item("1", "pivot mounting"), item("2", "trunnion"), item("3", "pivot")]).unwrap();
        assert!((r.rate - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.items[1].cleaned, "");
        assert_eq!(injection_report(&[]), Err(InjectionError::EmptyDataset));
    }
}
