//! Standardized effect sizes and Lin's concordance (ECS).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{DegenerateFlag, TestFamily, TestOutcome};

/// |d| assigned to fully separated degenerate data.
pub const D_CAP: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignConvention {
    #[default]
    AsObserved,
    AlignedToHypothesis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectFlag {
    /// Zero cell in a 2×2 table; 0.5 added to every cell.
    HaldaneCorrection,
    /// Separated degenerate data, d set to ±D_CAP.
    CappedSeparated,
    /// F with df1 > 1, converted through Cohen's f (d = 2f).
    MultiDfCohenF,
    /// χ² without a usable 2×2 table, converted through φ or Cramér's V.
    PhiConversion,
    /// Reported statistic lacked sign information; sign taken from the hypothesis.
    SignFromHypothesis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSize {
    pub d: f64,
    pub se: f64,
    pub source_family: TestFamily,
    #[serde(default)]
    pub sign_convention: SignConvention,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<EffectFlag>,
}

impl EffectSize {
    fn new(d: f64, n: f64, family: TestFamily) -> Self {
        EffectSize { d, se: se_of_d(d, n), source_family: family, sign_convention: SignConvention::AsObserved, flags: Vec::new() }
    }

    pub fn flag(mut self, f: EffectFlag) -> Self {
        if !self.flags.contains(&f) {
            self.flags.push(f);
            self.flags.sort();
        }
        self
    }

    /// Re-signs d so that positive means "in the hypothesized direction".
    pub fn aligned(mut self, hypothesis_sign: f64) -> Self {
        if self.sign_convention == SignConvention::AsObserved {
            self.d *= hypothesis_sign;
            self.sign_convention = SignConvention::AlignedToHypothesis;
        }
        self
    }

    /// δ̂ / SE(δ̂).
    pub fn z(&self) -> f64 {
        self.d / self.se
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EffectError {
    #[error("no d conversion for {0}")]
    UnsupportedFamily(TestFamily),
    #[error("effect vector has zero variance")]
    DegenerateVector,
    #[error("invalid effect input: {0}")]
    InvalidInput(String),
}

/// Large-sample SE of d: √(4/n + d²/(2n)).
pub fn se_of_d(d: f64, n: f64) -> f64 {
    (4.0 / n + d * d / (2.0 * n)).sqrt()
}

pub fn d_from_t_independent(t: f64, n1: f64, n2: f64) -> f64 {
    t * ((n1 + n2) / (n1 * n2)).sqrt()
}

pub fn d_from_t_one_sample(t: f64, n: f64) -> f64 {
    t / n.sqrt()
}

pub fn d_from_r(r: f64) -> f64 {
    2.0 * r / (1.0 - r * r).sqrt()
}

/// ln(OR)·√3/π for [[a, b], [c, d]]; the flag reports a Haldane correction.
pub fn d_from_2x2(table: [[f64; 2]; 2]) -> (f64, bool) {
    let zero = table.iter().flatten().any(|&x| x == 0.0);
    let adj = if zero { 0.5 } else { 0.0 };
    let [[a, b], [c, d]] = table.map(|row| row.map(|x| x + adj));
    let log_or = (a * d / (b * c)).ln();
    (log_or * 3f64.sqrt() / std::f64::consts::PI, zero)
}

pub fn d_from_proportion(p: f64, p0: f64) -> f64 {
    2.0 * (p - p0) / (p0 * (1.0 - p0)).sqrt()
}

fn split_two(outcome: &TestOutcome) -> (f64, f64) {
    match outcome.group_ns.as_slice() {
        [a, b] => (*a as f64, *b as f64),
        _ => {
            let total = outcome.total_n() as f64;
            (total / 2.0, total / 2.0)
        }
    }
}

fn signum(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Cohen's d with the observed sign (first group minus second).
pub fn cohens_d_from_test(outcome: &TestOutcome) -> Result<EffectSize, EffectError> {
    let family = outcome.family;
    let total = outcome.total_n() as f64;
    match outcome.degenerate {
        DegenerateFlag::ZeroVarianceIdentical => return Ok(EffectSize::new(0.0, total.max(2.0), family)),
        DegenerateFlag::ZeroVarianceSeparated => {
            let d = D_CAP * signum(outcome.observed_sign());
            return Ok(EffectSize::new(d, total.max(2.0), family).flag(EffectFlag::CappedSeparated));
        }
        DegenerateFlag::None => {}
    }
    let capped = |d: f64, n: f64| {
        if d.is_finite() {
            EffectSize::new(d, n, family)
        } else {
            EffectSize::new(D_CAP * signum(d), n, family).flag(EffectFlag::CappedSeparated)
        }
    };
    let es = match family {
        TestFamily::TIndependent => {
            let (n1, n2) = split_two(outcome);
            capped(d_from_t_independent(outcome.statistic, n1, n2), n1 + n2)
        }
        TestFamily::TPaired | TestFamily::TOneSample => {
            let n = outcome.df1 + 1.0;
            capped(d_from_t_one_sample(outcome.statistic, n), n)
        }
        TestFamily::AnovaOneway => {
            let df2 = outcome.df2.unwrap_or(total - outcome.df1 - 1.0);
            let n = if total > 0.0 { total } else { df2 + outcome.df1 + 1.0 };
            if outcome.df1 == 1.0 {
                let t = outcome.statistic.sqrt() * signum(outcome.observed_sign());
                let (n1, n2) = if outcome.group_ns.len() == 2 { split_two(outcome) } else { (n / 2.0, n / 2.0) };
                capped(d_from_t_independent(t, n1, n2), n)
            } else {
                let f = (outcome.statistic * outcome.df1 / df2).sqrt();
                capped(2.0 * f, n).flag(EffectFlag::MultiDfCohenF)
            }
        }
        TestFamily::ChiSquare => match &outcome.table {
            Some(t) if t.len() == 2 && t[0].len() == 2 && t[1].len() == 2 => {
                let n: u64 = t.iter().flatten().sum();
                let table = [[t[0][0] as f64, t[0][1] as f64], [t[1][0] as f64, t[1][1] as f64]];
                let (d, corrected) = d_from_2x2(table);
                let es = capped(d, n as f64);
                if corrected {
                    es.flag(EffectFlag::HaldaneCorrection)
                } else {
                    es
                }
            }
            other => {
                let (n, k) = match other {
                    Some(t) => (
                        t.iter().flatten().sum::<u64>() as f64,
                        (t.len().min(t.first().map_or(2, Vec::len)) - 1) as f64,
                    ),
                    None => (total, 1.0),
                };
                let r = (outcome.statistic / (n * k.max(1.0))).sqrt().min(1.0);
                capped(d_from_r(r), n).flag(EffectFlag::PhiConversion)
            }
        },
        TestFamily::Binomial => {
            let p0 = outcome.p0.ok_or_else(|| EffectError::InvalidInput("binomial outcome without p0".into()))?;
            capped(d_from_proportion(outcome.statistic, p0), total)
        }
        TestFamily::Correlation => {
            let r = outcome.effect_r.unwrap_or(f64::NAN);
            if r.is_nan() {
                return Err(EffectError::InvalidInput("correlation outcome without r".into()));
            }
            capped(d_from_r(r), outcome.df1 + 2.0)
        }
        TestFamily::MannWhitney => {
            let r = -outcome.effect_r.unwrap_or(0.0);
            capped(d_from_r(r), total)
        }
    };
    Ok(es)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Concordance {
    pub rho: f64,
    pub c_b: f64,
    pub ecs: f64,
}

/// Weighted concordance; weights are normalized to sum to one and the
/// deviations are centered at the weighted means.
pub fn weighted_ccc(x: &[f64], y: &[f64], w: &[f64]) -> Result<Concordance, EffectError> {
    if x.len() != y.len() || x.len() != w.len() || x.len() < 2 {
        return Err(EffectError::InvalidInput(format!("lengths {}, {}, {}", x.len(), y.len(), w.len())));
    }
    if w.iter().any(|&wi| !(wi > 0.0)) {
        return Err(EffectError::InvalidInput("weights must be positive".into()));
    }
    let total: f64 = w.iter().sum();
    let mx: f64 = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / total;
    let my: f64 = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / total;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for ((&xi, &yi), &wi) in x.iter().zip(y).zip(w) {
        let (u, v) = (xi - mx, yi - my);
        sxx += wi * u * u;
        syy += wi * v * v;
        sxy += wi * u * v;
    }
    sxx /= total;
    syy /= total;
    sxy /= total;
    if sxx == 0.0 || syy == 0.0 {
        return Err(EffectError::DegenerateVector);
    }
    let sd = (sxx * syy).sqrt();
    let rho = (sxy / sd).clamp(-1.0, 1.0);
    let c_b = 2.0 * sd / (sxx + syy + (mx - my).powi(2));
    Ok(Concordance { rho, c_b, ecs: rho * c_b })
}

/// Lin's concordance correlation with population variances.
pub fn ccc(x: &[f64], y: &[f64]) -> Result<Concordance, EffectError> {
    weighted_ccc(x, y, &vec![1.0; x.len()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestEffect {
    pub family: TestFamily,
    pub d_a: f64,
    pub d_h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FindingEffects {
    /// Unique across the benchmark, e.g. `study/F1`.
    pub finding_id: String,
    pub weight: f64,
    pub tests: Vec<TestEffect>,
}

impl FindingEffects {
    /// Finding-level (δ_a, δ_h): unweighted means over tests.
    pub fn deltas(&self) -> (f64, f64) {
        let m = self.tests.len() as f64;
        (
            self.tests.iter().map(|t| t.d_a).sum::<f64>() / m,
            self.tests.iter().map(|t| t.d_h).sum::<f64>() / m,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcsReport {
    /// Concordance across a finding's own tests; absent below two tests.
    pub per_finding: BTreeMap<String, Option<Concordance>>,
    pub global: Option<Concordance>,
    pub weights_used: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl EcsReport {
    pub fn global_ecs(&self) -> Option<f64> {
        self.global.map(|c| c.ecs)
    }
}

pub fn global_ecs(findings: &[FindingEffects]) -> Result<EcsReport, EffectError> {
    let used: Vec<&FindingEffects> = findings.iter().filter(|f| !f.tests.is_empty()).collect();
    if used.len() < 2 {
        return Err(EffectError::InvalidInput(format!("{} findings with effects", used.len())));
    }
    let total: f64 = used.iter().map(|f| f.weight).sum();
    let (mut xa, mut xh, mut w) = (Vec::new(), Vec::new(), Vec::new());
    let mut weights_used = BTreeMap::new();
    let mut per_finding = BTreeMap::new();
    for f in &used {
        let (a, h) = f.deltas();
        xa.push(a);
        xh.push(h);
        w.push(f.weight / total);
        weights_used.insert(f.finding_id.clone(), f.weight / total);
        let inner = if f.tests.len() >= 2 {
            let a: Vec<f64> = f.tests.iter().map(|t| t.d_a).collect();
            let h: Vec<f64> = f.tests.iter().map(|t| t.d_h).collect();
            ccc(&a, &h).ok()
        } else {
            None
        };
        per_finding.insert(f.finding_id.clone(), inner);
    }
    let mut flags = Vec::new();
    let global = match weighted_ccc(&xa, &xh, &w) {
        Ok(c) => Some(c),
        Err(EffectError::DegenerateVector) => {
            flags.push("degenerate_vector".to_string());
            None
        }
        Err(e) => return Err(e),
    };
    Ok(EcsReport { per_finding, global, weights_used, flags })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyEcs {
    pub per_family: BTreeMap<TestFamily, Concordance>,
    /// Families dropped for having fewer than two findings (or a constant vector).
    pub omitted: BTreeMap<TestFamily, String>,
}

/// ECS recomputed separately within each test family.
pub fn ecs_within_family(findings: &[FindingEffects]) -> FamilyEcs {
    let mut by_family: BTreeMap<TestFamily, Vec<FindingEffects>> = BTreeMap::new();
    for f in findings {
        let mut split: BTreeMap<TestFamily, Vec<TestEffect>> = BTreeMap::new();
        for t in &f.tests {
            split.entry(t.family).or_default().push(t.clone());
        }
        for (family, tests) in split {
            by_family.entry(family).or_default().push(FindingEffects {
                finding_id: f.finding_id.clone(),
                weight: f.weight,
                tests,
            });
        }
    }
    let mut out = FamilyEcs { per_family: BTreeMap::new(), omitted: BTreeMap::new() };
    for (family, group) in by_family {
        if group.len() < 2 {
            out.omitted.insert(family, "fewer_than_two_findings".into());
            continue;
        }
        match global_ecs(&group).map(|r| r.global) {
            Ok(Some(c)) => {
                out.per_family.insert(family, c);
            }
            _ => {
                out.omitted.insert(family, "degenerate_vector".into());
            }
        }
    }
    out
}
