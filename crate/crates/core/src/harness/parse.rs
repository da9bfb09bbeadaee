//! Extraction of `Qk=value` answers from free-form responses.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::LazyLock;

use regex::Regex;
use serde_json::Value;

use super::results::ParseStatus;
use crate::study::{Item, ResponseSchema};

static ANSWER_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(Q\d+(?:\.\d+)?)\s*=\s*([^,\n\s]+)").expect("answer regex"));

/// Every regex match, later duplicates overriding earlier ones.
pub fn parse_response(text: &str, expected: &BTreeSet<String>) -> (BTreeMap<String, String>, ParseStatus) {
    let mut found = BTreeMap::new();
    for c in ANSWER_RE.captures_iter(text) {
        found.insert(c[1].to_string(), c[2].to_string());
    }
    let status = if expected.iter().all(|q| found.contains_key(q)) {
        ParseStatus::Ok
    } else if found.is_empty() {
        ParseStatus::Failed
    } else {
        ParseStatus::ParsePartial
    };
    (found, status)
}

fn trim_answer(raw: &str) -> &str {
    raw.trim_matches(|c: char| matches!(c, '.' | ';' | ':' | ')' | '(' | '"' | '\'' | '*'))
}

/// Coerces one raw answer to the item's schema.
pub fn coerce(raw: &str, schema: &ResponseSchema) -> Option<Value> {
    let s = trim_answer(raw);
    match schema {
        ResponseSchema::Choice { options } => options
            .iter()
            .find(|o| o.eq_ignore_ascii_case(s))
            .map(|o| Value::String(o.clone())),
        ResponseSchema::Numeric { min, max } => {
            let x: f64 = s.trim_end_matches('%').parse().ok()?;
            let ok = x.is_finite() && min.is_none_or(|lo| x >= lo) && max.is_none_or(|hi| x <= hi);
            ok.then(|| serde_json::json!(x))
        }
        ResponseSchema::Scale { min, max } => {
            let x: f64 = s.parse().ok()?;
            let ok = x.fract() == 0.0 && x >= *min as f64 && x <= *max as f64;
            ok.then(|| serde_json::json!(x as i64))
        }
    }
}

/// Parses and coerces a response against the trial's items. Keys outside the
/// declared items are dropped; a failed coercion downgrades `ok` to partial.
pub fn parse_and_coerce(text: &str, items: &[Item]) -> (BTreeMap<String, Value>, ParseStatus) {
    let expected: BTreeSet<String> = items.iter().map(|i| i.q_id.clone()).collect();
    let (raw, status) = parse_response(text, &expected);
    let mut parsed = BTreeMap::new();
    let mut coercion_failed = false;
    for item in items {
        if let Some(r) = raw.get(&item.q_id) {
            match coerce(r, &item.schema) {
                Some(v) => {
                    parsed.insert(item.q_id.clone(), v);
                }
                None => coercion_failed = true,
            }
        }
    }
    let status = match status {
        ParseStatus::Ok if coercion_failed => ParseStatus::ParsePartial,
        ParseStatus::Ok => ParseStatus::Ok,
        _ if parsed.is_empty() => ParseStatus::Failed,
        _ => ParseStatus::ParsePartial,
    };
    (parsed, status)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(ids: &[&str]) -> BTreeSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn pattern_examples() {
        let (m, s) = parse_response("Q1=A, Q2=5", &set(&["Q1", "Q2"]));
        assert_eq!(s, ParseStatus::Ok);
        assert_eq!((m["Q1"].as_str(), m["Q2"].as_str()), ("A", "5"));
        let (m, _) = parse_response("Q1.2=7.5\nQ2=no", &set(&[]));
        assert_eq!((m["Q1.2"].as_str(), m["Q2"].as_str()), ("7.5", "no"));
        let (m, s) = parse_response("I think the answer is five", &set(&["Q1"]));
        assert!(m.is_empty());
        assert_eq!(s, ParseStatus::Failed);
        let (_, s) = parse_response("Q1 = B", &set(&["Q1", "Q2"]));
        assert_eq!(s, ParseStatus::ParsePartial);
    }

    #[test]
    fn coercion() {
        let choice = ResponseSchema::Choice { options: vec!["Yes".into(), "No".into()] };
        assert_eq!(coerce("yes.", &choice), Some(Value::String("Yes".into())));
        assert_eq!(coerce("maybe", &choice), None);
        let pct = ResponseSchema::Numeric { min: Some(0.0), max: Some(100.0) };
        assert_eq!(coerce("45%", &pct), Some(serde_json::json!(45.0)));
        assert_eq!(coerce("140", &pct), None);
        let scale = ResponseSchema::Scale { min: 1, max: 7 };
        assert_eq!(coerce("7", &scale), Some(serde_json::json!(7)));
        assert_eq!(coerce("3.5", &scale), None);
    }
}
