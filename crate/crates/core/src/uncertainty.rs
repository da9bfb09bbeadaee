//! Bootstrap SEs, the hierarchical Stouffer test, prior-scale sensitivity
//! and the human noise ceiling.

use std::collections::BTreeMap;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::{score_run, AgentScore, AlignmentError};
use crate::effects::{ccc, se_of_d};
use crate::evidence::PriorScales;
use crate::harness::{ParseFailPolicy, RunResults};
use crate::rng::{self, streams, RNG_ALGORITHM};
use crate::stats::special::{chi2_sf, normal_cdf, normal_quantile};
use crate::study::StudyBundle;

pub const DEFAULT_BOOTSTRAP_B: usize = 200;
pub const P_CLAMP: f64 = 1e-15;

#[derive(Debug, Error)]
pub enum UncertaintyError {
    #[error("need at least 2 participants, got {0}")]
    InsufficientParticipants(usize),
    #[error("need at least one replicate")]
    NoReplicates,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Alignment(#[from] AlignmentError),
}

/// SD with divisor B − 1; zero for a single replicate.
fn replicate_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Participant-level bootstrap of any statistic of a run. Replicate `b`
/// draws from its own stream, so the result does not depend on scheduling.
pub fn bootstrap_statistic<F>(results: &RunResults, b: usize, seed: u64, statistic: F) -> Result<Vec<f64>, UncertaintyError>
where
    F: Fn(&RunResults) -> Result<f64, UncertaintyError> + Sync,
{
    let n = results.individual_data.len();
    if n < 2 {
        return Err(UncertaintyError::InsufficientParticipants(n));
    }
    if b == 0 {
        return Err(UncertaintyError::NoReplicates);
    }
    (0..b)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, streams::REPLICATE + i as u64);
            let mut resampled = results.clone();
            resampled.individual_data = (0..n).map(|_| results.individual_data[r.random_range(0..n)].clone()).collect();
            statistic(&resampled)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyBootstrap {
    pub study_id: String,
    pub se: f64,
    pub replicates: Vec<f64>,
}

pub fn bootstrap_pas(
    bundle: &StudyBundle,
    results: &RunResults,
    b: usize,
    seed: u64,
    scales: &PriorScales,
    policy: ParseFailPolicy,
) -> Result<StudyBootstrap, UncertaintyError> {
    let replicates = bootstrap_statistic(results, b, seed, |r| Ok(score_run(bundle, r, scales, policy)?.value()))?;
    Ok(StudyBootstrap { study_id: bundle.study_id.clone(), se: replicate_sd(&replicates), replicates })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub agent_id: String,
    pub per_study_se: BTreeMap<String, f64>,
    pub total_se: f64,
    #[serde(rename = "B")]
    pub b: usize,
    pub seed: u64,
    pub rng: String,
}

impl BootstrapReport {
    pub fn new(agent_id: impl Into<String>, per_study_se: BTreeMap<String, f64>, b: usize, seed: u64) -> Self {
        let ses: Vec<f64> = per_study_se.values().copied().collect();
        let total_se = if ses.is_empty() { 0.0 } else { propagate_se(&ses) };
        BootstrapReport { agent_id: agent_id.into(), per_study_se, total_se, b, seed, rng: RNG_ALGORITHM.into() }
    }
}

/// SE of an unweighted mean of K independent estimates: √(Σ se²)/K.
pub fn propagate_se(per_study_se: &[f64]) -> f64 {
    assert!(!per_study_se.is_empty(), "propagate_se needs at least one SE");
    per_study_se.iter().map(|s| s * s).sum::<f64>().sqrt() / per_study_se.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectPair {
    pub delta_a: f64,
    pub se_a: f64,
    pub delta_h: f64,
    pub se_h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoufferFindingInput {
    pub finding_id: String,
    pub tests: Vec<EffectPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoufferStudyInput {
    pub study_id: String,
    pub findings: Vec<StoufferFindingInput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoufferFinding {
    pub finding_id: String,
    pub z: Vec<f64>,
    pub chi2: f64,
    pub df: usize,
    pub p: f64,
    pub z_star: f64,
    #[serde(default)]
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoufferStudy {
    pub study_id: String,
    pub findings: Vec<StoufferFinding>,
    pub z_study: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoufferReport {
    pub studies: Vec<StoufferStudy>,
    pub benchmark_z: f64,
    pub p_global: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl StoufferReport {
    /// Largest absolute gap between a stored level and its recomputation
    /// from the level below.
    pub fn consistency_gap(&self) -> f64 {
        let mut gap: f64 = 0.0;
        for s in &self.studies {
            for f in &s.findings {
                let chi2: f64 = f.z.iter().map(|z| z * z).sum();
                gap = gap.max((chi2 - f.chi2).abs());
                gap = gap.max((chi2_sf(f.chi2, f.df as f64) - f.p).abs());
                gap = gap.max((normal_quantile(1.0 - f.p.clamp(P_CLAMP, 1.0 - P_CLAMP)) - f.z_star).abs());
            }
            let z = s.findings.iter().map(|f| f.z_star).sum::<f64>() / (s.findings.len() as f64).sqrt();
            gap = gap.max((z - s.z_study).abs());
        }
        let bz = self.studies.iter().map(|s| s.z_study).sum::<f64>() / (self.studies.len() as f64).sqrt();
        gap = gap.max((bz - self.benchmark_z).abs());
        gap.max((1.0 - normal_cdf(self.benchmark_z) - self.p_global).abs())
    }
}

pub fn stouffer_global(studies: &[StoufferStudyInput]) -> Result<StoufferReport, UncertaintyError> {
    let mut flags = Vec::new();
    let mut out = Vec::new();
    for s in studies {
        let mut findings = Vec::new();
        for f in s.findings.iter().filter(|f| !f.tests.is_empty()) {
            let mut z = Vec::new();
            for t in &f.tests {
                let se = (t.se_a * t.se_a + t.se_h * t.se_h).sqrt();
                if !(t.se_a > 0.0 && t.se_h > 0.0) {
                    return Err(UncertaintyError::InvalidInput(format!("{}/{}: SEs must be positive", s.study_id, f.finding_id)));
                }
                z.push((t.delta_a - t.delta_h) / se);
            }
            let chi2: f64 = z.iter().map(|x| x * x).sum();
            let p = chi2_sf(chi2, z.len() as f64);
            let pc = p.clamp(P_CLAMP, 1.0 - P_CLAMP);
            let clamped = pc != p;
            if clamped && !flags.iter().any(|f| f == "p_clamped") {
                flags.push("p_clamped".to_string());
            }
            findings.push(StoufferFinding {
                finding_id: f.finding_id.clone(),
                df: z.len(),
                z,
                chi2,
                p,
                z_star: normal_quantile(1.0 - pc),
                clamped,
            });
        }
        if findings.is_empty() {
            continue;
        }
        let z_study = findings.iter().map(|f| f.z_star).sum::<f64>() / (findings.len() as f64).sqrt();
        out.push(StoufferStudy { study_id: s.study_id.clone(), findings, z_study });
    }
    if out.is_empty() {
        return Err(UncertaintyError::InvalidInput("no tests to combine".into()));
    }
    let benchmark_z = out.iter().map(|s| s.z_study).sum::<f64>() / (out.len() as f64).sqrt();
    Ok(StoufferReport { studies: out, benchmark_z, p_global: 1.0 - normal_cdf(benchmark_z), flags })
}

/// Stouffer inputs from a scored agent's per-test effects.
pub fn stouffer_inputs(agent: &AgentScore) -> Vec<StoufferStudyInput> {
    agent
        .studies
        .iter()
        .map(|s| StoufferStudyInput {
            study_id: s.study_id.clone(),
            findings: s
                .pas
                .children
                .iter()
                .map(|f| StoufferFindingInput {
                    finding_id: f.id.clone(),
                    tests: f
                        .children
                        .iter()
                        .filter_map(|t| t.test.as_deref())
                        .map(|t| EffectPair {
                            delta_a: t.agent.effect.d,
                            se_a: t.agent.effect.se,
                            delta_h: t.human.effect.d,
                            se_h: t.human.effect.se,
                        })
                        .collect(),
                })
                .collect(),
        })
        .collect()
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleResult {
    pub scale: f64,
    pub pas: BTreeMap<String, f64>,
    /// Rank agreement with the reference scale; absent for fewer than two agents.
    pub spearman_vs_reference: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaPas {
    pub mean: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub reference_scales: PriorScales,
    pub scales: Vec<ScaleResult>,
    pub min_pairwise_spearman: Option<f64>,
    pub delta_pas: BTreeMap<String, DeltaPas>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

/// Re-scores cached outcomes at each t-family prior scale (the ANOVA scale
/// moves by the same factor) and compares agent rankings.
pub fn sensitivity_sweep(agents: &[AgentScore], reference: &PriorScales, scales: &[f64]) -> Result<SensitivityReport, UncertaintyError> {
    if let Some(s) = scales.iter().find(|s| !(**s > 0.0 && **s <= 2.0)) {
        return Err(UncertaintyError::InvalidInput(format!("prior scale {s} outside (0, 2]")));
    }
    let ids: Vec<String> = agents.iter().map(|a| a.agent_id.clone()).collect();
    let score_at = |ps: PriorScales| -> Result<Vec<f64>, UncertaintyError> {
        agents.par_iter().map(|a| Ok(a.rescored(&ps)?.benchmark_pas)).collect()
    };
    let base = score_at(*reference)?;
    let per_scale: Vec<Vec<f64>> =
        scales.iter().map(|&s| score_at(reference.rescaled_to(s))).collect::<Result<_, _>>()?;

    let mut flags = Vec::new();
    if agents.len() < 2 {
        flags.push("spearman_undefined_single_agent".to_string());
    }
    let scale_results: Vec<ScaleResult> = scales
        .iter()
        .zip(&per_scale)
        .map(|(&scale, v)| ScaleResult {
            scale,
            pas: ids.iter().cloned().zip(v.iter().copied()).collect(),
            spearman_vs_reference: spearman(&base, v),
        })
        .collect();
    let mut min_pair: Option<f64> = None;
    for i in 0..per_scale.len() {
        for j in i + 1..per_scale.len() {
            if let Some(r) = spearman(&per_scale[i], &per_scale[j]) {
                min_pair = Some(min_pair.map_or(r, |m: f64| m.min(r)));
            }
        }
    }
    if per_scale.len() == 1 && agents.len() >= 2 {
        min_pair = Some(1.0);
    }
    let delta_pas = ids
        .iter()
        .enumerate()
        .map(|(k, id)| {
            let d: Vec<f64> = per_scale.iter().map(|v| (v[k] - base[k]).abs()).collect();
            let mean = if d.is_empty() { 0.0 } else { d.iter().sum::<f64>() / d.len() as f64 };
            (id.clone(), DeltaPas { mean, max: d.iter().copied().fold(0.0, f64::max) })
        })
        .collect();
    Ok(SensitivityReport { reference_scales: *reference, scales: scale_results, min_pairwise_spearman: min_pair, delta_pas, flags })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeilingReport {
    pub ecs_mean: f64,
    pub rho_mean: f64,
    pub c_b_mean: f64,
    #[serde(rename = "B")]
    pub b: usize,
    pub seed: u64,
    pub rng: String,
    /// Draws where a replicate vector was constant.
    pub skipped: usize,
}

/// Expected ECS between two independent human replications of each finding.
pub fn noise_ceiling(human_effects: &[(f64, u64)], b: usize, seed: u64) -> Result<CeilingReport, UncertaintyError> {
    if b == 0 {
        return Err(UncertaintyError::NoReplicates);
    }
    if human_effects.len() < 2 || human_effects.iter().any(|&(_, n)| n < 2) {
        return Err(UncertaintyError::InvalidInput("need at least two findings, each with n >= 2".into()));
    }
    let dists: Vec<Normal<f64>> = human_effects
        .iter()
        .map(|&(d, n)| Normal::new(d, se_of_d(d, n as f64)).expect("finite SE"))
        .collect();
    let draws: Vec<Option<(f64, f64, f64)>> = (0..b)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, streams::REPLICATE + i as u64);
            let x: Vec<f64> = dists.iter().map(|d| d.sample(&mut r)).collect();
            let y: Vec<f64> = dists.iter().map(|d| d.sample(&mut r)).collect();
            ccc(&x, &y).ok().map(|c| (c.ecs, c.rho, c.c_b))
        })
        .collect();
    let ok: Vec<(f64, f64, f64)> = draws.iter().flatten().copied().collect();
    if ok.is_empty() {
        return Err(UncertaintyError::InvalidInput("every draw was degenerate".into()));
    }
    let m = ok.len() as f64;
    Ok(CeilingReport {
        ecs_mean: ok.iter().map(|c| c.0).sum::<f64>() / m,
        rho_mean: ok.iter().map(|c| c.1).sum::<f64>() / m,
        c_b_mean: ok.iter().map(|c| c.2).sum::<f64>() / m,
        b,
        seed,
        rng: RNG_ALGORITHM.into(),
        skipped: b - ok.len(),
    })
}
