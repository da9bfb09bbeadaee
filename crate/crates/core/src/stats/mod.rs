//! Classical tests recomputed on agent response data.

mod classical;
pub mod special;

pub use classical::{
    anova_oneway, binomial_test, chi_square_contingency, mann_whitney_u, pearson_correlation,
    run_test, t_test_independent, t_test_one_sample, t_test_paired,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFamily {
    TIndependent,
    TPaired,
    TOneSample,
    AnovaOneway,
    ChiSquare,
    Binomial,
    Correlation,
    MannWhitney,
}

impl TestFamily {
    pub const ALL: [TestFamily; 8] = [
        TestFamily::TIndependent,
        TestFamily::TPaired,
        TestFamily::TOneSample,
        TestFamily::AnovaOneway,
        TestFamily::ChiSquare,
        TestFamily::Binomial,
        TestFamily::Correlation,
        TestFamily::MannWhitney,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TestFamily::TIndependent => "t_independent",
            TestFamily::TPaired => "t_paired",
            TestFamily::TOneSample => "t_one_sample",
            TestFamily::AnovaOneway => "anova_oneway",
            TestFamily::ChiSquare => "chi_square",
            TestFamily::Binomial => "binomial",
            TestFamily::Correlation => "correlation",
            TestFamily::MannWhitney => "mann_whitney",
        }
    }
}

impl std::fmt::Display for TestFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TestFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TestFamily::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| format!("unknown test family `{s}`"))
    }
}

/// Zero-variance handling recorded on every outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegenerateFlag {
    #[default]
    None,
    /// Every observation identical across groups: no information.
    ZeroVarianceIdentical,
    /// Groups constant but at different levels: deterministic effect.
    ZeroVarianceSeparated,
}

/// Raw material for one test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SampleData {
    Groups { groups: Vec<(String, Vec<f64>)> },
    Table { table: Vec<Vec<u64>> },
    Binomial { successes: u64, trials: u64, p0: f64 },
    Paired { x: Vec<f64>, y: Vec<f64> },
    OneSample { x: Vec<f64>, mu0: f64 },
}

/// A computed test result, on either the human or the agent side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub family: TestFamily,
    #[serde(with = "crate::canonical::nonfinite")]
    pub statistic: f64,
    pub df1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub df2: Option<f64>,
    pub p: f64,
    pub group_ns: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_means: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_sds: Option<Vec<f64>>,
    #[serde(default)]
    pub degenerate: DegenerateFlag,
    /// Pearson r for correlations, rank-biserial r for Mann-Whitney.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effect_r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<Vec<u64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p0: Option<f64>,
}

impl TestOutcome {
    pub fn total_n(&self) -> u64 {
        self.group_ns.iter().sum()
    }

    /// Whether the outcome carries enough detail to recover an effect sign.
    pub fn sign_known(&self) -> bool {
        match self.family {
            TestFamily::AnovaOneway => self.group_means.as_ref().is_some_and(|m| m.len() == 2),
            TestFamily::ChiSquare => self.table.as_ref().is_some_and(|t| t.len() == 2 && t[0].len() == 2),
            _ => true,
        }
    }

    /// Sign of the observed effect in group order (first minus second).
    ///
    /// Unsigned statistics without group detail (a bare F or χ²) report +1.
    pub fn observed_sign(&self) -> f64 {
        let s = match self.family {
            TestFamily::TIndependent | TestFamily::TPaired | TestFamily::TOneSample => {
                self.statistic
            }
            TestFamily::AnovaOneway => match &self.group_means {
                Some(m) if m.len() == 2 => m[0] - m[1],
                _ => 1.0,
            },
            TestFamily::ChiSquare => match &self.table {
                Some(t) if t.len() == 2 && t[0].len() == 2 => {
                    let (a, b, c, d) = (t[0][0] as f64, t[0][1] as f64, t[1][0] as f64, t[1][1] as f64);
                    a * d - b * c
                }
                _ => 1.0,
            },
            TestFamily::Binomial => self.statistic - self.p0.unwrap_or(0.5),
            TestFamily::Correlation => self.effect_r.unwrap_or(self.statistic),
            // r_rb = 1 - 2U/(n1 n2) is positive when the first group ranks lower.
            TestFamily::MannWhitney => -self.effect_r.unwrap_or(0.0),
        };
        if s > 0.0 {
            1.0
        } else if s < 0.0 {
            -1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least {need} observations per group, got {got}")]
    InsufficientData { need: usize, got: usize },
    #[error("contingency table has a zero row or column margin")]
    ZeroMargin,
    #[error("series has zero variance")]
    DegenerateVariance,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("{family} cannot be computed from {data} data")]
    FamilyDataMismatch { family: TestFamily, data: &'static str },
}
