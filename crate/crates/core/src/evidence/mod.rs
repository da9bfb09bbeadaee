//! Test statistics to log Bayes factors to posterior probabilities.
//!
//! t-family and single-df F statistics use the JZS (Cauchy) prior on
//! standardized effect size; contingency tables and multi-df F use the
//! BIC approximation; binomial tests use the conjugate Beta(1,1) prior.
//! π is the logistic of ln BF10, clamped away from 0 and 1 by [`PI_EPS`].

mod quadrature;

pub use quadrature::{integrate, QuadratureResult};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::special::{ln_choose, normal_cdf};
use crate::stats::{DegenerateFlag, TestFamily, TestOutcome};

/// Clamp applied to every posterior probability.
pub const PI_EPS: f64 = 1e-12;

pub const DEFAULT_SCALE_T: f64 = std::f64::consts::FRAC_1_SQRT_2;
pub const DEFAULT_SCALE_ANOVA: f64 = 0.5;

const QUAD_REL_TOL: f64 = 1e-10;
const QUAD_MAX_SEGMENTS: usize = 4000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvidenceError {
    #[error("JZS quadrature did not reach tolerance (t={t}, n={n_eff}, df={df}, r={scale})")]
    QuadratureFailure { t: f64, n_eff: f64, df: f64, scale: f64 },
    #[error("invalid evidence input: {0}")]
    InvalidInput(String),
}

/// Cauchy prior widths for the JZS routes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorScales {
    pub t: f64,
    pub anova: f64,
}

impl Default for PriorScales {
    fn default() -> Self {
        PriorScales { t: DEFAULT_SCALE_T, anova: DEFAULT_SCALE_ANOVA }
    }
}

impl PriorScales {
    /// Both scales multiplied so that the t scale becomes `t_scale`.
    pub fn rescaled_to(&self, t_scale: f64) -> PriorScales {
        let factor = t_scale / self.t;
        PriorScales { t: t_scale, anova: self.anova * factor }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceMethod {
    Jzs,
    Bic,
    BetaBinomial,
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceFlag {
    /// F with df1 > 1 scored through the BIC rule.
    MultiDfBicFallback,
    /// Only an inequality was reported; the bound stands in for the value.
    InequalityBound,
    DegenerateIdentical,
    DegenerateSeparated,
    /// Mann-Whitney evidence routed through r_rb → d → t.
    RankBiserialConversion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    #[serde(with = "crate::canonical::nonfinite")]
    pub log_bf10: f64,
    pub pi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_scale: Option<f64>,
    pub family: TestFamily,
    pub method: EvidenceMethod,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<EvidenceFlag>,
}

impl Evidence {
    fn new(log_bf10: f64, family: TestFamily, method: EvidenceMethod, prior_scale: Option<f64>) -> Self {
        Evidence {
            log_bf10,
            pi: posterior_from_bf(log_bf10),
            prior_scale,
            family,
            method,
            flags: Vec::new(),
        }
    }

    pub fn bf10(&self) -> f64 {
        self.log_bf10.exp()
    }

    pub fn flagged(mut self, flag: EvidenceFlag) -> Self {
        if !self.flags.contains(&flag) {
            self.flags.push(flag);
            self.flags.sort();
        }
        self
    }
}

/// How a t statistic's sample enters the JZS likelihood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TDesign {
    /// One-sample or paired: n_eff = n, df = n − 1.
    OneSample { n: f64 },
    /// Two independent groups: n_eff = n1·n2/(n1+n2), df = n1 + n2 − 2.
    Independent { n1: f64, n2: f64 },
}

impl TDesign {
    pub fn effective_n(&self) -> f64 {
        match *self {
            TDesign::OneSample { n } => n,
            TDesign::Independent { n1, n2 } => n1 * n2 / (n1 + n2),
        }
    }

    pub fn df(&self) -> f64 {
        match *self {
            TDesign::OneSample { n } => n - 1.0,
            TDesign::Independent { n1, n2 } => n1 + n2 - 2.0,
        }
    }
}

/// Logistic map from ln BF10 to π, clamped to [ε, 1 − ε].
pub fn posterior_from_bf(log_bf10: f64) -> f64 {
    if log_bf10.is_nan() {
        return 0.5;
    }
    let pi = if log_bf10 >= 0.0 {
        1.0 / (1.0 + (-log_bf10).exp())
    } else {
        let e = log_bf10.exp();
        e / (1.0 + e)
    };
    pi.clamp(PI_EPS, 1.0 - PI_EPS)
}

/// ln(π / (1 − π)).
pub fn logit(pi: f64) -> f64 {
    pi.ln() - (-pi).ln_1p()
}

/// Log of the JZS integrand in g, before the change of variables.
fn jzs_log_integrand(g: f64, t2: f64, n_eff: f64, df: f64, r2: f64) -> f64 {
    let a = 1.0 + n_eff * r2 * g;
    -0.5 * a.ln() - 0.5 * (df + 1.0) * (t2 / (a * df)).ln_1p()
        - 0.5 * (2.0 * std::f64::consts::PI).ln()
        - 1.5 * g.ln()
        - 0.5 / g
}

/// ln BF10 for a t statistic under a Cauchy(0, `scale`) prior on δ.
///
/// The integral over g is taken on u = g/(1+g) ∈ (0, 1) and shifted by the
/// peak of the log integrand so the adaptive rule works on O(1) values.
pub fn jzs_log_bf(t: f64, n_eff: f64, df: f64, scale: f64) -> Result<f64, EvidenceError> {
    if !t.is_finite() || !(n_eff > 0.0) || !(df > 0.0) || !(scale > 0.0) {
        return Err(EvidenceError::InvalidInput(format!(
            "t={t}, n_eff={n_eff}, df={df}, scale={scale}"
        )));
    }
    let t2 = t * t;
    let r2 = scale * scale;
    let log_u = |u: f64| {
        if u <= 0.0 || u >= 1.0 {
            return f64::NEG_INFINITY;
        }
        let g = u / (1.0 - u);
        jzs_log_integrand(g, t2, n_eff, df, r2) - 2.0 * (1.0 - u).ln()
    };

    const GRID: usize = 256;
    let mut peak = f64::NEG_INFINITY;
    let mut peak_at = 0.5;
    for i in 1..GRID {
        let u = i as f64 / GRID as f64;
        let v = log_u(u);
        if v > peak {
            peak = v;
            peak_at = u;
        }
    }
    // Tight peaks can fall between grid points; add breakpoints around it.
    let step = 1.0 / GRID as f64;
    let mut edges: Vec<f64> = (0..=64).map(|i| i as f64 / 64.0).collect();
    for k in [-2.0, -1.0, -0.5, 0.5, 1.0, 2.0] {
        let e = peak_at + k * step;
        if e > 0.0 && e < 1.0 {
            edges.push(e);
        }
    }
    edges.sort_by(f64::total_cmp);
    edges.dedup();

    let result = integrate(|u| (log_u(u) - peak).exp(), &edges, QUAD_REL_TOL, QUAD_MAX_SEGMENTS)
        .filter(|r| r.value > 0.0)
        .ok_or(EvidenceError::QuadratureFailure { t, n_eff, df, scale })?;
    let log_marginal_h1 = peak + result.value.ln();
    let log_marginal_h0 = -0.5 * (df + 1.0) * (t2 / df).ln_1p();
    Ok(log_marginal_h1 - log_marginal_h0)
}

/// JZS Bayes factor for a t statistic.
pub fn bf_jzs_t(t: f64, design: TDesign, scale: f64) -> Result<Evidence, EvidenceError> {
    let log_bf = jzs_log_bf(t, design.effective_n(), design.df(), scale)?;
    let family = match design {
        TDesign::OneSample { .. } => TestFamily::TOneSample,
        TDesign::Independent { .. } => TestFamily::TIndependent,
    };
    Ok(Evidence::new(log_bf, family, EvidenceMethod::Jzs, Some(scale)))
}

/// Bayes factor for a one-way F.
///
/// df1 = 1 goes through t = √F with the total sample size `n` as the
/// effective n; df1 > 1 uses the BIC rule on χ² ≈ df1·F.
pub fn bf_anova(f: f64, df1: f64, df2: f64, n: f64, scale: f64) -> Result<Evidence, EvidenceError> {
    if !(f >= 0.0) || !(df1 >= 1.0) {
        return Err(EvidenceError::InvalidInput(format!("F={f}, df1={df1}")));
    }
    if df1 == 1.0 {
        let log_bf = jzs_log_bf(f.sqrt(), n, df2, scale)?;
        return Ok(Evidence::new(log_bf, TestFamily::AnovaOneway, EvidenceMethod::Jzs, Some(scale)));
    }
    let log_bf = (df1 * f - df1 * n.ln()) / 2.0;
    Ok(Evidence::new(log_bf, TestFamily::AnovaOneway, EvidenceMethod::Bic, None)
        .flagged(EvidenceFlag::MultiDfBicFallback))
}

/// BIC approximation: ln BF10 = (χ² − df·ln n)/2.
pub fn bf_chi_square_bic(chi2: f64, df: f64, n: f64) -> Evidence {
    Evidence::new((chi2 - df * n.ln()) / 2.0, TestFamily::ChiSquare, EvidenceMethod::Bic, None)
}

/// Exact Beta(1,1)–Binomial Bayes factor against a point null p0.
pub fn bf_binomial_beta(k: u64, n: u64, p0: f64) -> Result<Evidence, EvidenceError> {
    if n == 0 || k > n || !(p0 > 0.0 && p0 < 1.0) {
        return Err(EvidenceError::InvalidInput(format!("k={k}, n={n}, p0={p0}")));
    }
    let log_m1 = -((n + 1) as f64).ln();
    let log_m0 = ln_choose(n, k) + k as f64 * p0.ln() + (n - k) as f64 * (1.0 - p0).ln();
    Ok(Evidence::new(log_m1 - log_m0, TestFamily::Binomial, EvidenceMethod::BetaBinomial, None))
}

/// Posterior mass split over (H+, H−, H0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSplit {
    pub pi_pos: f64,
    pub pi_neg: f64,
    pub pi_null: f64,
}

impl PosteriorSplit {
    pub fn as_array(&self) -> [f64; 3] {
        [self.pi_pos, self.pi_neg, self.pi_null]
    }
}

/// Apportions π_alt between H+ and H− by Φ(δ̂/SE).
pub fn split_posterior_direction(pi_alt: f64, effect_z: f64) -> PosteriorSplit {
    let share = if effect_z.is_nan() { 0.5 } else { normal_cdf(effect_z) };
    let pi_pos = pi_alt * share;
    PosteriorSplit {
        pi_pos,
        pi_neg: pi_alt - pi_pos,
        pi_null: 1.0 - pi_alt,
    }
}

/// Evidence for any computed outcome, human or agent side.
pub fn evidence_for_outcome(outcome: &TestOutcome, scales: &PriorScales) -> Result<Evidence, EvidenceError> {
    let family = outcome.family;
    match outcome.degenerate {
        DegenerateFlag::ZeroVarianceIdentical => {
            return Ok(Evidence::new(0.0, family, EvidenceMethod::Degenerate, None)
                .flagged(EvidenceFlag::DegenerateIdentical));
        }
        DegenerateFlag::ZeroVarianceSeparated => {
            return Ok(Evidence::new(f64::INFINITY, family, EvidenceMethod::Degenerate, None)
                .flagged(EvidenceFlag::DegenerateSeparated));
        }
        DegenerateFlag::None => {}
    }
    let ns: Vec<f64> = outcome.group_ns.iter().map(|&n| n as f64).collect();
    let total: f64 = ns.iter().sum();
    let ev = match family {
        TestFamily::TIndependent => {
            let (n1, n2) = two_groups(&ns, total)?;
            let mut ev = bf_jzs_t(outcome.statistic, TDesign::Independent { n1, n2 }, scales.t)?;
            ev.family = family;
            ev
        }
        TestFamily::TPaired | TestFamily::TOneSample => {
            let n = outcome.df1 + 1.0;
            let mut ev = bf_jzs_t(outcome.statistic, TDesign::OneSample { n }, scales.t)?;
            ev.family = family;
            ev
        }
        TestFamily::AnovaOneway => {
            let df2 = outcome
                .df2
                .ok_or_else(|| EvidenceError::InvalidInput("F outcome without df2".into()))?;
            let n = if total > 0.0 { total } else { df2 + outcome.df1 + 1.0 };
            bf_anova(outcome.statistic, outcome.df1, df2, n, scales.anova)?
        }
        TestFamily::ChiSquare => {
            let n = outcome
                .table
                .as_ref()
                .map(|t| t.iter().flatten().sum::<u64>() as f64)
                .unwrap_or(total);
            bf_chi_square_bic(outcome.statistic, outcome.df1, n)
        }
        TestFamily::Binomial => {
            let n = outcome.group_ns.first().copied().unwrap_or(0);
            let k = (outcome.statistic * n as f64).round() as u64;
            bf_binomial_beta(k, n, outcome.p0.unwrap_or(0.5))?
        }
        TestFamily::Correlation => {
            let n = outcome.df1 + 2.0;
            let mut ev = Evidence::new(
                jzs_log_bf(outcome.statistic, n, outcome.df1, scales.t)?,
                family,
                EvidenceMethod::Jzs,
                Some(scales.t),
            );
            ev.family = family;
            ev
        }
        TestFamily::MannWhitney => {
            let (n1, n2) = two_groups(&ns, total)?;
            let r = -outcome.effect_r.unwrap_or(0.0);
            if r.abs() >= 1.0 {
                return Ok(Evidence::new(f64::INFINITY, family, EvidenceMethod::Degenerate, None)
                    .flagged(EvidenceFlag::DegenerateSeparated));
            }
            let d = 2.0 * r / (1.0 - r * r).sqrt();
            let t = d / (1.0 / n1 + 1.0 / n2).sqrt();
            let mut ev = bf_jzs_t(t, TDesign::Independent { n1, n2 }, scales.t)?;
            ev.family = family;
            ev.flagged(EvidenceFlag::RankBiserialConversion)
        }
    };
    Ok(ev)
}

fn two_groups(ns: &[f64], total: f64) -> Result<(f64, f64), EvidenceError> {
    match ns {
        [a, b] => Ok((*a, *b)),
        _ if total >= 2.0 => Ok((total / 2.0, total / 2.0)),
        _ => Err(EvidenceError::InvalidInput("two-group test without group sizes".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent oracle: trapezoid rule over s = ln g on a fixed grid.
    fn trapezoid_log_bf(t: f64, n_eff: f64, df: f64, scale: f64, points: usize) -> f64 {
        let (lo, hi) = (-30.0f64, 40.0f64);
        let h = (hi - lo) / (points - 1) as f64;
        let r2 = scale * scale;
        let log_null = -0.5 * (df + 1.0) * (1.0 + t * t / df).ln();
        let mut sum = 0.0;
        for i in 0..points {
            let s = lo + i as f64 * h;
            let g = s.exp();
            let a = 1.0 + n_eff * r2 * g;
            let log_h = -0.5 * a.ln() - 0.5 * (df + 1.0) * (1.0 + t * t / (a * df)).ln()
                - 0.5 * (2.0 * std::f64::consts::PI).ln()
                - 1.5 * s
                - 0.5 / g
                + s;
            let w = if i == 0 || i == points - 1 { 0.5 } else { 1.0 };
            sum += w * (log_h - log_null).exp();
        }
        (sum * h).ln()
    }

    #[test]
    fn jzs_matches_trapezoid_oracle() {
        // t = 2.0, n = 50 one-sample, r = 0.707
        let got = jzs_log_bf(2.0, 50.0, 49.0, DEFAULT_SCALE_T).unwrap();
        let oracle = trapezoid_log_bf(2.0, 50.0, 49.0, DEFAULT_SCALE_T, 1_000_000);
        assert!((got - oracle).abs() < 1e-8, "got {got}, oracle {oracle}");
        // Frozen from an independent 30-digit mpmath evaluation.
        assert!((got - -0.040168833948869867).abs() < 1e-8);
    }

    #[test]
    fn jzs_matches_frozen_high_precision_values() {
        // (t, n_eff, df, r, ln BF10), mpmath at 30 digits.
        let table = [
            (49.1f64.sqrt(), 314.0, 312.0, 0.5, 19.983280656874314),
            (1.2f64.sqrt(), 314.0, 312.0, 0.5, 0.15988919697773818f64.ln()),
            (49.1f64.sqrt(), 78.5, 312.0, 0.5, 19.933167087947165),
            (1.2f64.sqrt(), 78.5, 312.0, 0.7071067811865476, 0.22067339288043944f64.ln()),
        ];
        for (t, n, df, r, want) in table {
            let got = jzs_log_bf(t, n, df, r).unwrap();
            assert!((got - want).abs() < 1e-8, "t={t} n={n}: {got} vs {want}");
        }
    }

    #[test]
    fn null_t_favours_null() {
        for n in [5.0, 20.0, 300.0] {
            let ev = bf_jzs_t(0.0, TDesign::OneSample { n }, DEFAULT_SCALE_T).unwrap();
            assert!(ev.log_bf10 < 0.0);
            assert!(ev.pi < 0.5);
        }
    }

    #[test]
    fn anova_worked_example() {
        let human = bf_anova(49.1, 1.0, 312.0, 314.0, 0.5).unwrap();
        assert!(human.pi >= 0.999);
        assert!((16.0..=21.0).contains(&human.log_bf10));
        let agent = bf_anova(1.2, 1.0, 312.0, 314.0, 0.5).unwrap();
        assert!((0.10..=0.20).contains(&agent.bf10()));
        assert!((0.10..=0.17).contains(&agent.pi));
        assert!(bf_anova(0.0, 1.0, 40.0, 42.0, 0.5).unwrap().log_bf10 < 0.0);
    }

    #[test]
    fn anova_multi_df_uses_bic_and_flags() {
        let ev = bf_anova(4.0, 3.0, 96.0, 100.0, 0.5).unwrap();
        assert_eq!(ev.method, EvidenceMethod::Bic);
        assert!((ev.log_bf10 - (12.0 - 3.0 * 100f64.ln()) / 2.0).abs() < 1e-14);
        assert!(ev.flags.contains(&EvidenceFlag::MultiDfBicFallback));
    }

    #[test]
    fn bic_examples() {
        let ev = bf_chi_square_bic(9.5, 1.0, 42.0);
        assert!((ev.log_bf10 - 2.881).abs() < 1e-3);
        assert!((ev.bf10() - 17.8).abs() < 0.1);
        assert!((ev.pi - 0.947).abs() < 1e-3);
        let ev = bf_chi_square_bic(2.0 * 30f64.ln(), 2.0, 30.0);
        assert!((ev.pi - 0.5).abs() < 1e-12);
        let ev = bf_chi_square_bic(0.0, 1.0, 42.0);
        assert_eq!(ev.log_bf10, -(42f64.ln()) / 2.0);
    }

    #[test]
    fn beta_binomial_examples() {
        let ev = bf_binomial_beta(1, 1, 0.5).unwrap();
        assert!(ev.log_bf10.abs() < 1e-12);
        assert!((ev.pi - 0.5).abs() < 1e-12);
        let ev = bf_binomial_beta(10, 10, 0.5).unwrap();
        assert!((ev.bf10() - 1024.0 / 11.0).abs() < 1e-9);
        assert!((ev.pi - 0.989).abs() < 1e-3);
        assert!(bf_binomial_beta(500, 1000, 0.5).unwrap().log_bf10 < 0.0);
    }

    #[test]
    fn posterior_examples() {
        assert_eq!(posterior_from_bf(0.0), 0.5);
        assert!(posterior_from_bf((1e8f64).ln()) > 0.99999);
        assert!((posterior_from_bf(0.15f64.ln()) - 0.15 / 1.15).abs() < 1e-12);
        assert_eq!(posterior_from_bf(f64::INFINITY), 1.0 - PI_EPS);
        assert_eq!(posterior_from_bf(f64::NEG_INFINITY), PI_EPS);
    }

    #[test]
    fn split_examples() {
        let s = split_posterior_direction(0.8, 0.0);
        assert!((s.pi_pos - 0.4).abs() < 1e-15 && (s.pi_neg - 0.4).abs() < 1e-15);
        assert!((s.pi_null - 0.2).abs() < 1e-15);
        let s = split_posterior_direction(1.0, f64::INFINITY);
        assert_eq!(s.as_array(), [1.0, 0.0, 0.0]);
        let s = split_posterior_direction(0.9, 1.2816);
        assert!((s.pi_pos - 0.81).abs() < 1e-4);
        assert!((s.pi_neg - 0.09).abs() < 1e-4);
        assert!((s.pi_null - 0.1).abs() < 1e-12);
    }

    #[test]
    fn degenerate_outcomes_map_to_policy() {
        let mut out = crate::stats::t_test_independent(&[5.0; 3], &[5.0; 3]).unwrap();
        let ev = evidence_for_outcome(&out, &PriorScales::default()).unwrap();
        assert_eq!(ev.pi, 0.5);
        out = crate::stats::t_test_independent(&[5.0; 3], &[1.0; 3]).unwrap();
        let ev = evidence_for_outcome(&out, &PriorScales::default()).unwrap();
        assert_eq!(ev.pi, 1.0 - PI_EPS);
    }

    proptest! {
        #[test]
        fn logit_round_trip(x in -20.0f64..20.0) {
            let back = logit(posterior_from_bf(x));
            // π is stored in f64, so 1 − π carries absolute error ~ε; the
            // recoverable precision of the logit is about ε·e^|x|.
            let tol = 1e-10f64.max(4.0 * f64::EPSILON * x.abs().exp());
            prop_assert!((back - x).abs() <= tol, "x={} back={}", x, back);
        }

        #[test]
        fn pi_monotone_in_t(t in 0.0f64..6.0, dt in 0.05f64..1.0, n in 5.0f64..400.0) {
            let a = bf_jzs_t(t, TDesign::OneSample { n }, DEFAULT_SCALE_T).unwrap();
            let b = bf_jzs_t(t + dt, TDesign::OneSample { n }, DEFAULT_SCALE_T).unwrap();
            prop_assert!(b.log_bf10 > a.log_bf10);
            prop_assert!(b.pi >= a.pi);
        }

        #[test]
        fn split_sums_to_one(pi in 0.0f64..=1.0, z in -8.0f64..8.0) {
            let s = split_posterior_direction(pi, z);
            prop_assert!((s.pi_pos + s.pi_neg + s.pi_null - 1.0).abs() <= 1e-12);
            prop_assert!((s.pi_pos + s.pi_neg - pi).abs() <= 1e-12);
        }

        #[test]
        fn bic_is_exact(chi2 in 0.0f64..200.0, df in 1u32..10, n in 2u32..5000) {
            let ev = bf_chi_square_bic(chi2, df as f64, n as f64);
            prop_assert_eq!(ev.log_bf10, (chi2 - df as f64 * (n as f64).ln()) / 2.0);
        }
    }
}
