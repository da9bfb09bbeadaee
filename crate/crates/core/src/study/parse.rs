//! Reported-statistic strings such as `F(1, 312) = 49.1` or `t < 1`.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StatKind {
    #[serde(rename = "t")]
    T,
    #[serde(rename = "F")]
    F,
    #[serde(rename = "chi2")]
    Chi2,
    #[serde(rename = "r")]
    R,
    #[serde(rename = "z")]
    Z,
    #[serde(rename = "U")]
    U,
    /// A bare p-value such as `p < .001`; carries no effect information.
    #[serde(rename = "p")]
    P,
    #[serde(rename = "proportion")]
    Proportion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Inequality {
    #[default]
    Exact,
    LessThan,
    GreaterThan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedStatistic {
    pub kind: StatKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub df1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub df2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    #[serde(default)]
    pub inequality: Inequality,
}

impl ParsedStatistic {
    /// The exact value, or the bound when only an inequality was reported.
    pub fn point(&self) -> f64 {
        self.value.or(self.bound).unwrap_or(f64::NAN)
    }

    pub fn is_bound(&self) -> bool {
        self.inequality != Inequality::Exact
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("unparsable statistic `{text}`")]
pub struct UnparsableStatistic {
    pub text: String,
}

const NUMBER: &str = r"[-+−]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?";

static STAT_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(
        r"^(?P<kind>t|F|χ2|χ²|chi2|chi\^2|chi-square|X2|r|z|U|p)\s*(?:\((?P<args>[^)]*)\))?\s*(?P<op><=|>=|=|<|>|≤|≥)\s*(?P<val>{NUMBER})(?:\s*,.*)?$"
    ))
    .expect("statistic regex")
});

static PROPORTION_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r"^(?P<val>{NUMBER})\s*%$")).expect("proportion regex"));

static N_ARG_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[Nn]\s*=\s*(?P<n>\d+)$").expect("n regex"));

fn number(s: &str) -> Option<f64> {
    s.replace('−', "-").parse::<f64>().ok()
}

pub fn parse_statistic_string(text: &str) -> Result<ParsedStatistic, UnparsableStatistic> {
    let err = || UnparsableStatistic { text: text.to_string() };
    let trimmed = text.trim();
    if let Some(c) = PROPORTION_RE.captures(trimmed) {
        let v = number(&c["val"]).ok_or_else(err)? / 100.0;
        return Ok(ParsedStatistic {
            kind: StatKind::Proportion,
            value: Some(v),
            bound: None,
            df1: None,
            df2: None,
            n: None,
            inequality: Inequality::Exact,
        });
    }
    let c = STAT_RE.captures(trimmed).ok_or_else(err)?;
    let kind = match &c["kind"] {
        "t" => StatKind::T,
        "F" => StatKind::F,
        "r" => StatKind::R,
        "z" => StatKind::Z,
        "U" => StatKind::U,
        "p" => StatKind::P,
        _ => StatKind::Chi2,
    };
    let mut dfs = Vec::new();
    let mut n = None;
    if let Some(args) = c.name("args") {
        for part in args.as_str().split(',').map(str::trim).filter(|p| !p.is_empty()) {
            if let Some(m) = N_ARG_RE.captures(part) {
                n = Some(m["n"].parse::<u64>().map_err(|_| err())?);
            } else {
                let df = number(part).filter(|d| *d >= 0.0).ok_or_else(err)?;
                dfs.push(df);
            }
        }
    }
    if dfs.len() > 2 {
        return Err(err());
    }
    let v = number(&c["val"]).ok_or_else(err)?;
    let inequality = match &c["op"] {
        "=" => Inequality::Exact,
        "<" | "<=" | "≤" => Inequality::LessThan,
        _ => Inequality::GreaterThan,
    };
    let (value, bound) = match inequality {
        Inequality::Exact => (Some(v), None),
        _ => (None, Some(v)),
    };
    Ok(ParsedStatistic {
        kind,
        value,
        bound,
        df1: dfs.first().copied(),
        df2: dfs.get(1).copied(),
        n,
        inequality,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anova_with_two_dfs() {
        let p = parse_statistic_string("F(1, 312) = 49.1").unwrap();
        assert_eq!(p.kind, StatKind::F);
        assert_eq!((p.df1, p.df2, p.value), (Some(1.0), Some(312.0), Some(49.1)));
        assert_eq!(p.inequality, Inequality::Exact);
    }

    #[test]
    fn bare_inequality() {
        let p = parse_statistic_string("t < 1").unwrap();
        assert_eq!(p.kind, StatKind::T);
        assert_eq!(p.bound, Some(1.0));
        assert_eq!(p.value, None);
        assert_eq!(p.inequality, Inequality::LessThan);
        let p = parse_statistic_string("p < .001").unwrap();
        assert_eq!((p.kind, p.bound), (StatKind::P, Some(0.001)));
    }

    #[test]
    fn chi_square_with_sample_size() {
        for text in ["χ2(1, N=42) = 9.5", "χ²(1,N=42)=9.5", "chi2(1, N = 42) = 9.5"] {
            let p = parse_statistic_string(text).unwrap();
            assert_eq!(p.kind, StatKind::Chi2);
            assert_eq!((p.df1, p.df2, p.n, p.value), (Some(1.0), None, Some(42), Some(9.5)));
        }
    }

    #[test]
    fn other_forms() {
        assert_eq!(parse_statistic_string("82%").unwrap().value, Some(0.82));
        assert_eq!(parse_statistic_string("F = 56.2").unwrap().df1, None);
        let p = parse_statistic_string("t(98) = −4.5, p < .001").unwrap();
        assert_eq!((p.df1, p.value), (Some(98.0), Some(-4.5)));
        assert_eq!(parse_statistic_string("r(48) = .31").unwrap().value, Some(0.31));
        assert_eq!(parse_statistic_string("U = 120").unwrap().kind, StatKind::U);
        assert_eq!(parse_statistic_string("z ≥ 2.5").unwrap().inequality, Inequality::GreaterThan);
    }

    #[test]
    fn rejects_garbage() {
        for text in ["", "not significant", "F(1, 2, 3) = 4", "t(98) = ", "Q(1) = 3"] {
            let e = parse_statistic_string(text).unwrap_err();
            assert_eq!(e.text, text);
        }
    }
}
