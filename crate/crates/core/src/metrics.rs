//! Reply normalisation and scoring: Gestalt pattern matching (Ratcliff /
//! Obershelp), exact match, and inclusion match.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("every ground-truth answer is empty after normalisation")]
    EmptyTruth,
}

/// Lowercase, trim, collapse whitespace runs, and drop trailing `. , ! ?`.
pub fn normalize(text: &str) -> String {
    let lowered = text.to_lowercase();
    let mut out = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    loop {
        let trimmed = out.trim_end_matches(['.', ',', '!', '?']).trim_end();
        if trimmed.len() == out.len() {
            break;
        }
        out.truncate(trimmed.len());
    }
    out
}

/// Longest maximal run of ASCII digits (leftmost on ties), or the whole input
/// when it holds no digit.
pub fn extract_answer_token(normalized: &str) -> String {
    let bytes = normalized.as_bytes();
    let mut best: Option<(usize, usize)> = None;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_digit() {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if best.is_none_or(|(s, e)| i - start > e - s) {
                best = Some((start, i));
            }
        } else {
            i += 1;
        }
    }
    match best {
        Some((s, e)) => normalized[s..e].to_string(),
        None => normalized.to_string(),
    }
}

const STACK_COLS: usize = 64;

/// Longest common substring of `a` and `b`: `(start_a, start_b, len)`.
/// Ties go to the earliest start in `a`, then the earliest in `b`.
fn longest_match<T: PartialEq>(a: &[T], b: &[T]) -> (usize, usize, usize) {
    if b.len() < STACK_COLS {
        let mut rows = [[0u32; STACK_COLS]; 2];
        let (prev, cur) = rows.split_at_mut(1);
        longest_match_in(a, b, &mut prev[0], &mut cur[0])
    } else {
        let mut prev = vec![0u32; b.len() + 1];
        let mut cur = vec![0u32; b.len() + 1];
        longest_match_in(a, b, &mut prev, &mut cur)
    }
}

fn longest_match_in<T: PartialEq>(a: &[T], b: &[T], prev: &mut [u32], cur: &mut [u32]) -> (usize, usize, usize) {
    let mut best = (0, 0, 0);
    let (mut prev, mut cur) = (prev, cur);
    prev[..=b.len()].fill(0);
    cur[0] = 0;
    // prev[j + 1] holds the common-suffix length ending at a[i - 1], b[j]
    for (i, ai) in a.iter().enumerate() {
        for (j, bj) in b.iter().enumerate() {
            let len = if ai == bj { prev[j] + 1 } else { 0 };
            cur[j + 1] = len;
            // runs are visited by end position, so equal lengths compare starts
            if len as usize > best.2 {
                best = (i + 1 - len as usize, j + 1 - len as usize, len as usize);
            } else if len > 0 && len as usize == best.2 {
                let cand = (i + 1 - len as usize, j + 1 - len as usize);
                if cand < (best.0, best.1) {
                    best = (cand.0, cand.1, len as usize);
                }
            }
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    best
}

/// Total matched length `K_m` under Ratcliff/Obershelp recursion: take the
/// longest common substring, then recurse on the left and right remainders.
pub fn matched_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let (sa, sb, len) = longest_match(a, b);
    if len == 0 {
        return 0;
    }
    len + matched_len(&a[..sa], &b[..sb]) + matched_len(&a[sa + len..], &b[sb + len..])
}

/// Gestalt pattern matching similarity `2 K_m / (|a| + |b|)`.
pub fn gpm(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    match (a.is_empty(), b.is_empty()) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => 2.0 * matched_len(&a, &b) as f64 / (a.len() + b.len()) as f64,
    }
}

pub fn exact_match<S: AsRef<str>>(prediction: &str, truths: &[S]) -> bool {
    let p = normalize(prediction);
    truths.iter().any(|t| normalize(t.as_ref()) == p)
}

/// Ground truth contained in the prediction (never the reverse).
pub fn inclusion_match<S: AsRef<str>>(prediction: &str, truths: &[S]) -> Result<bool, MetricError> {
    let p = normalize(prediction);
    let norm: Vec<String> = truths.iter().map(|t| normalize(t.as_ref())).filter(|t| !t.is_empty()).collect();
    if norm.is_empty() {
        return Err(MetricError::EmptyTruth);
    }
    Ok(norm.iter().any(|t| p.contains(t.as_str())))
}

/// How GPM input is prepared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GpmInput {
    /// Compare the extracted digit run; replies to synthetic probes are
    /// sentences wrapped around a number.
    AnswerToken,
    /// Compare whole normalised strings (free-form dataset answers).
    Normalized,
}

/// All scores for one reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub gpm: f64,
    pub exact: u8,
    pub inclusion: u8,
    pub normalized_prediction: String,
    pub extracted_answer: String,
}

impl MatchResult {
    /// Score `prediction` against every truth; GPM is the best over truths.
    /// An all-empty truth list scores zero inclusion rather than failing.
    pub fn score<S: AsRef<str>>(prediction: &str, truths: &[S], input: GpmInput) -> MatchResult {
        let normalized_prediction = normalize(prediction);
        let extracted_answer = extract_answer_token(&normalized_prediction);
        let probe = match input {
            GpmInput::AnswerToken => &extracted_answer,
            GpmInput::Normalized => &normalized_prediction,
        };
        let gpm = truths
            .iter()
            .map(|t| gpm(probe, &normalize(t.as_ref())))
            .fold(0.0, f64::max);
        MatchResult {
            gpm,
            exact: exact_match(prediction, truths) as u8,
            inclusion: inclusion_match(prediction, truths).unwrap_or(false) as u8,
            normalized_prediction,
            extracted_answer,
        }
    }

    /// The score recorded for a trial that produced no reply.
    pub fn failed() -> MatchResult {
        MatchResult {
            gpm: 0.0,
            exact: 0,
            inclusion: 0,
            normalized_prediction: String::new(),
            extracted_answer: String::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize("  The Number is 593. "), "the number is 593");
        assert_eq!(normalize("593"), "593");
        assert_eq!(normalize("A=5 9 3"), "a=5 9 3");
        assert_eq!(normalize("593 .!"), "593");
        assert_eq!(normalize("a\t\n b"), "a b");
        assert_eq!(normalize("?!"), "");
    }

    #[test]
    fn extract_examples() {
        assert_eq!(extract_answer_token("the number is 593"), "593");
        assert_eq!(extract_answer_token("12 and 4567"), "4567");
        assert_eq!(extract_answer_token("no number visible"), "no number visible");
        assert_eq!(extract_answer_token("12 and 34"), "12");
    }

    #[test]
    fn gpm_examples() {
        assert_eq!(gpm("5934549", "5934549"), 1.0);
        assert_eq!(gpm("abc", "xyz"), 0.0);
        assert!((gpm("5934549", "593459") - 12.0 / 13.0).abs() < 1e-12);
        assert_eq!(gpm("", ""), 1.0);
        assert_eq!(gpm("", "a"), 0.0);
        assert_eq!(gpm("a", ""), 0.0);
    }

    #[test]
    fn exact_examples() {
        assert!(exact_match("593", &["593"]));
        assert!(!exact_match("the number is 593", &["593"]));
        assert!(exact_match("593 ", &["593"]));
    }

    #[test]
    fn inclusion_examples() {
        assert_eq!(inclusion_match("the number is 593", &["593"]), Ok(true));
        assert_eq!(inclusion_match("5930", &["593"]), Ok(true));
        assert_eq!(inclusion_match("59 3", &["593"]), Ok(false));
        assert_eq!(inclusion_match("x", &[" ", "."]), Err(MetricError::EmptyTruth));
    }

    #[test]
    fn score_uses_extracted_token() {
        let m = MatchResult::score("The number is 593.", &["593"], GpmInput::AnswerToken);
        assert_eq!((m.gpm, m.exact, m.inclusion), (1.0, 0, 1));
        assert_eq!(m.extracted_answer, "593");
        let n = MatchResult::score("The number is 593.", &["593"], GpmInput::Normalized);
        assert!(n.gpm < 1.0);
    }

    proptest! {
        #[test]
        fn exact_implies_inclusion(p in "[a-c0-2 .]{0,8}", t in "[a-c0-2][a-c0-2 ]{0,5}") {
            if exact_match(&p, &[&t]) {
                prop_assert_eq!(inclusion_match(&p, &[&t]), Ok(true));
            }
        }

        #[test]
        fn exact_digit_truth_scores_full_gpm(t in "[0-9]{1,8}", pad in " {0,3}") {
            let p = format!("{pad}{t}{pad}.");
            let m = MatchResult::score(&p, &[&t], GpmInput::AnswerToken);
            prop_assert_eq!(m.exact, 1);
            prop_assert_eq!(m.gpm, 1.0);
        }

        #[test]
        fn gpm_bounded(a in "[0-9a-c]{0,12}", b in "[0-9a-c]{0,12}") {
            let v = gpm(&a, &b);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(gpm(&a, &a), 1.0);
        }
    }
}
