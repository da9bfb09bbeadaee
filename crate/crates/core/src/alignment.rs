//! PAS at test, finding, study and benchmark level.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::effects::{self, cohens_d_from_test, EcsReport, EffectFlag, EffectSize, FamilyEcs, FindingEffects, TestEffect};
use crate::evaluate::{agent_outcome, human_outcome, AgentOutcome, EvaluateError, HumanOutcome};
use crate::harness::{ParseFailPolicy, RunResults};
use crate::evidence::{
    evidence_for_outcome, split_posterior_direction, Evidence, EvidenceError, EvidenceFlag, PosteriorSplit, PriorScales,
    PI_EPS,
};
use crate::stats::{TestFamily, TestOutcome};
use crate::study::{Direction, StudyBundle};

pub fn pas_test(pi_h: f64, pi_a: f64) -> f64 {
    pi_h * pi_a + (1.0 - pi_h) * (1.0 - pi_a)
}

pub fn pas_test_threeway(h: &PosteriorSplit, a: &PosteriorSplit) -> f64 {
    h.as_array().iter().zip(a.as_array()).map(|(x, y)| x * y).sum()
}

/// Mean on the arctanh(2A − 1) scale, mapped back to [0, 1].
pub fn aggregate_fisher_z(scores: &[f64]) -> f64 {
    assert!(!scores.is_empty(), "aggregate_fisher_z needs at least one score");
    let bound = 1.0 - PI_EPS;
    let mean = scores.iter().map(|a| (2.0 * a - 1.0).clamp(-bound, bound).atanh()).sum::<f64>() / scores.len() as f64;
    (mean.tanh() + 1.0) / 2.0
}

pub fn benchmark_pas(study_scores: &[f64]) -> f64 {
    assert!(!study_scores.is_empty(), "benchmark_pas needs at least one study");
    study_scores.iter().sum::<f64>() / study_scores.len() as f64
}

#[derive(Debug, Error)]
pub enum AlignmentError {
    #[error("study {study_id}: expected {expected} agent outcomes, got {got}")]
    TestCountMismatch { study_id: String, expected: usize, got: usize },
    #[error("{path}: {source}")]
    Human { path: String, source: EvaluateError },
    #[error("{path}: {source}")]
    Evidence { path: String, source: EvidenceError },
    #[error("{path}: {source}")]
    Effect { path: String, source: effects::EffectError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Test,
    Finding,
    Study,
    Benchmark,
}

/// One side of a test comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideDetail {
    /// Cached statistic so sensitivity sweeps can re-score without the raw data.
    pub outcome: Option<TestOutcome>,
    pub evidence: Evidence,
    /// Signed toward the hypothesis.
    pub effect: EffectSize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<PosteriorSplit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestDetail {
    pub finding_id: String,
    pub index: usize,
    pub test_name: String,
    pub family: TestFamily,
    pub direction: Direction,
    pub three_way: bool,
    #[serde(default)]
    pub human_from_bound: bool,
    pub human: SideDetail,
    pub agent: SideDetail,
    pub agent_used: u64,
    pub agent_excluded: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PasScore {
    pub level: Level,
    pub id: String,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<PasScore>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<Box<TestDetail>>,
}

impl PasScore {
    /// Recomputes this node from its children with the stated aggregation.
    pub fn recomputed(&self) -> f64 {
        let child: Vec<f64> = self.children.iter().map(|c| c.value).collect();
        match self.level {
            Level::Test => self.value,
            Level::Finding | Level::Study => aggregate_fisher_z(&child),
            Level::Benchmark => benchmark_pas(&child),
        }
    }

    pub fn tests(&self) -> Vec<&TestDetail> {
        let mut out = Vec::new();
        fn walk<'a>(n: &'a PasScore, out: &mut Vec<&'a TestDetail>) {
            if let Some(t) = &n.test {
                out.push(t);
            }
            for c in &n.children {
                walk(c, out);
            }
        }
        walk(self, &mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestInput {
    pub test_name: String,
    pub family: TestFamily,
    pub direction: Direction,
    pub human: HumanOutcome,
    pub agent: AgentOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FindingInput {
    pub finding_id: String,
    pub weight: f64,
    pub tests: Vec<TestInput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyScore {
    pub study_id: String,
    pub domain: String,
    pub pas: PasScore,
    pub finding_weights: BTreeMap<String, f64>,
    pub excluded: u64,
}

impl StudyScore {
    pub fn value(&self) -> f64 {
        self.pas.value
    }

    /// Finding-level effects keyed `study_id/finding_id`.
    pub fn finding_effects(&self) -> Vec<FindingEffects> {
        self.pas
            .children
            .iter()
            .map(|f| FindingEffects {
                finding_id: format!("{}/{}", self.study_id, f.id),
                weight: self.finding_weights.get(&f.id).copied().unwrap_or(1.0),
                tests: f
                    .children
                    .iter()
                    .filter_map(|t| t.test.as_deref())
                    .map(|t| TestEffect { family: t.family, d_a: t.agent.effect.d, d_h: t.human.effect.d })
                    .collect(),
            })
            .collect()
    }

    /// Inputs cached in the tree, for re-scoring at other prior scales.
    pub fn cached_inputs(&self) -> Vec<FindingInput> {
        self.pas
            .children
            .iter()
            .map(|f| FindingInput {
                finding_id: f.id.clone(),
                weight: self.finding_weights.get(&f.id).copied().unwrap_or(1.0),
                tests: f
                    .children
                    .iter()
                    .filter_map(|t| t.test.as_deref())
                    .map(|t| TestInput {
                        test_name: t.test_name.clone(),
                        family: t.family,
                        direction: t.direction,
                        human: HumanOutcome {
                            outcome: t.human.outcome.clone().expect("human outcome cached"),
                            from_bound: t.human_from_bound,
                        },
                        agent: AgentOutcome {
                            outcome: t.agent.outcome.clone(),
                            used: t.agent_used,
                            excluded: t.agent_excluded,
                            note: None,
                        },
                    })
                    .collect(),
            })
            .collect()
    }

    pub fn rescored(&self, scales: &PriorScales) -> Result<StudyScore, AlignmentError> {
        score_inputs(&self.study_id, &self.domain, &self.cached_inputs(), scales)
    }
}

fn side(outcome: Option<&TestOutcome>, direction: Direction, scales: &PriorScales, path: &str, from_bound: bool) -> Result<(SideDetail, Vec<String>), AlignmentError> {
    let mut flags = Vec::new();
    let Some(o) = outcome else {
        // Uncomputable agent test: no information in either direction.
        let evidence = Evidence {
            log_bf10: 0.0,
            pi: 0.5,
            prior_scale: None,
            family: TestFamily::TIndependent,
            method: crate::evidence::EvidenceMethod::Degenerate,
            flags: Vec::new(),
        };
        let effect = EffectSize {
            d: 0.0,
            se: 1.0,
            source_family: TestFamily::TIndependent,
            sign_convention: effects::SignConvention::AlignedToHypothesis,
            flags: Vec::new(),
        };
        flags.push("agent_uncomputable".to_string());
        return Ok((SideDetail { outcome: None, evidence, effect, split: None }, flags));
    };
    let mut evidence = evidence_for_outcome(o, scales).map_err(|source| AlignmentError::Evidence { path: path.to_string(), source })?;
    if from_bound {
        evidence = evidence.flagged(EvidenceFlag::InequalityBound);
    }
    let mut effect = cohens_d_from_test(o).map_err(|source| AlignmentError::Effect { path: path.to_string(), source })?;
    if !o.sign_known() {
        effect.d = effect.d.abs() * direction.sign();
        effect = effect.flag(EffectFlag::SignFromHypothesis);
    }
    let effect = effect.aligned(direction.sign());
    Ok((SideDetail { outcome: Some(o.clone()), evidence, effect, split: None }, flags))
}

/// Scores a study from prepared inputs.
pub fn score_inputs(study_id: &str, domain: &str, findings: &[FindingInput], scales: &PriorScales) -> Result<StudyScore, AlignmentError> {
    let mut finding_nodes = Vec::new();
    let mut weights = BTreeMap::new();
    let mut excluded = 0;
    for f in findings {
        let mut test_nodes = Vec::new();
        for (j, t) in f.tests.iter().enumerate() {
            let path = format!("{study_id}/{}/{j}", f.finding_id);
            let (mut human, _) = side(Some(&t.human.outcome), t.direction, scales, &path, t.human.from_bound)?;
            let (mut agent, mut flags) = side(t.agent.outcome.as_ref(), t.direction, scales, &path, false)?;
            let three_way = t.direction.is_directional();
            let value = if three_way {
                let hs = split_posterior_direction(human.evidence.pi, human.effect.z());
                let as_ = split_posterior_direction(agent.evidence.pi, agent.effect.z());
                human.split = Some(hs);
                agent.split = Some(as_);
                pas_test_threeway(&hs, &as_)
            } else {
                pas_test(human.evidence.pi, agent.evidence.pi)
            };
            if t.agent.excluded > 0 {
                flags.push(format!("excluded_{}", t.agent.excluded));
            }
            excluded += t.agent.excluded;
            test_nodes.push(PasScore {
                level: Level::Test,
                id: format!("{}#{j}", f.finding_id),
                value,
                children: Vec::new(),
                test: Some(Box::new(TestDetail {
                    finding_id: f.finding_id.clone(),
                    index: j,
                    test_name: t.test_name.clone(),
                    family: t.family,
                    direction: t.direction,
                    three_way,
                    human_from_bound: t.human.from_bound,
                    human,
                    agent,
                    agent_used: t.agent.used,
                    agent_excluded: t.agent.excluded,
                    flags,
                })),
            });
        }
        let values: Vec<f64> = test_nodes.iter().map(|n| n.value).collect();
        weights.insert(f.finding_id.clone(), f.weight);
        finding_nodes.push(PasScore {
            level: Level::Finding,
            id: f.finding_id.clone(),
            value: aggregate_fisher_z(&values),
            children: test_nodes,
            test: None,
        });
    }
    let values: Vec<f64> = finding_nodes.iter().map(|n| n.value).collect();
    Ok(StudyScore {
        study_id: study_id.to_string(),
        domain: domain.to_string(),
        pas: PasScore { level: Level::Study, id: study_id.to_string(), value: aggregate_fisher_z(&values), children: finding_nodes, test: None },
        finding_weights: weights,
        excluded,
    })
}

/// Scores a bundle against agent outcomes given in `bundle.tests()` order.
pub fn score_study_outcomes(bundle: &StudyBundle, agent: &[AgentOutcome], scales: &PriorScales) -> Result<StudyScore, AlignmentError> {
    if agent.len() != bundle.test_count() {
        return Err(AlignmentError::TestCountMismatch {
            study_id: bundle.study_id.clone(),
            expected: bundle.test_count(),
            got: agent.len(),
        });
    }
    let mut next = agent.iter();
    let mut findings = Vec::new();
    for f in &bundle.findings {
        let mut tests = Vec::new();
        for (j, t) in f.tests.iter().enumerate() {
            let human = human_outcome(t).map_err(|source| AlignmentError::Human {
                path: format!("{}/{}/{j}", bundle.study_id, f.finding_id),
                source,
            })?;
            tests.push(TestInput {
                test_name: t.test_name.clone(),
                family: t.test_family,
                direction: t.direction,
                human,
                agent: next.next().expect("length checked").clone(),
            });
        }
        findings.push(FindingInput { finding_id: f.finding_id.clone(), weight: f.weight, tests });
    }
    score_inputs(&bundle.study_id, bundle.domain.as_str(), &findings, scales)
}

pub fn score_study(bundle: &StudyBundle, agent_tests: &[TestOutcome], scales: &PriorScales) -> Result<StudyScore, AlignmentError> {
    let wrapped: Vec<AgentOutcome> = agent_tests
        .iter()
        .map(|o| AgentOutcome { outcome: Some(o.clone()), used: o.total_n(), excluded: 0, note: None })
        .collect();
    score_study_outcomes(bundle, &wrapped, scales)
}

/// Recomputes every ground-truth test on a run and scores the study.
pub fn score_run(bundle: &StudyBundle, results: &RunResults, scales: &PriorScales, policy: ParseFailPolicy) -> Result<StudyScore, AlignmentError> {
    let agent: Vec<AgentOutcome> = bundle.tests().map(|(_, _, t)| agent_outcome(bundle, t, results, policy)).collect();
    score_study_outcomes(bundle, &agent, scales)
}

/// One agent's scores over a benchmark set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentScore {
    pub agent_id: String,
    #[serde(with = "crate::canonical::nonfinite")]
    pub benchmark_pas: f64,
    pub per_domain: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ecs: Option<EcsReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ecs_by_family: Option<FamilyEcs>,
    pub studies: Vec<StudyScore>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl AgentScore {
    pub fn from_studies(agent_id: impl Into<String>, mut studies: Vec<StudyScore>) -> AgentScore {
        studies.sort_by(|a, b| a.study_id.cmp(&b.study_id));
        let values: Vec<f64> = studies.iter().map(StudyScore::value).collect();
        let mut by_domain: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for s in &studies {
            by_domain.entry(s.domain.clone()).or_default().push(s.value());
        }
        let per_domain = by_domain.into_iter().map(|(k, v)| (k, benchmark_pas(&v))).collect();
        let effects: Vec<FindingEffects> = studies.iter().flat_map(StudyScore::finding_effects).collect();
        let mut flags = Vec::new();
        let ecs = match effects::global_ecs(&effects) {
            Ok(r) => Some(r),
            Err(e) => {
                flags.push(format!("ecs_unavailable: {e}"));
                None
            }
        };
        AgentScore {
            agent_id: agent_id.into(),
            benchmark_pas: if values.is_empty() { f64::NAN } else { benchmark_pas(&values) },
            per_domain,
            ecs,
            ecs_by_family: Some(effects::ecs_within_family(&effects)),
            studies,
            flags,
        }
    }

    pub fn global_ecs(&self) -> Option<f64> {
        self.ecs.as_ref().and_then(EcsReport::global_ecs)
    }

    pub fn pas_tree(&self) -> PasScore {
        PasScore {
            level: Level::Benchmark,
            id: self.agent_id.clone(),
            value: self.benchmark_pas,
            children: self.studies.iter().map(|s| s.pas.clone()).collect(),
            test: None,
        }
    }

    pub fn rescored(&self, scales: &PriorScales) -> Result<AgentScore, AlignmentError> {
        let studies = self.studies.iter().map(|s| s.rescored(scales)).collect::<Result<Vec<_>, _>>()?;
        Ok(AgentScore::from_studies(self.agent_id.clone(), studies))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::study::load_study_bundle;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::path::Path;

    fn fixture(name: &str) -> StudyBundle {
        load_study_bundle(Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)).unwrap()
    }

    #[test]
    fn pas_examples() {
        assert_eq!(pas_test(0.5, 0.91), 0.5);
        assert_relative_eq!(pas_test(1.0, 0.13), 0.13, epsilon = 1e-15);
        assert_eq!(pas_test(1.0, 1.0), 1.0);
        let u = PosteriorSplit { pi_pos: 1.0 / 3.0, pi_neg: 1.0 / 3.0, pi_null: 1.0 / 3.0 };
        assert_relative_eq!(pas_test_threeway(&u, &u), 1.0 / 3.0, epsilon = 1e-15);
        let h = PosteriorSplit { pi_pos: 1.0, pi_neg: 0.0, pi_null: 0.0 };
        let a = PosteriorSplit { pi_pos: 0.0, pi_neg: 1.0, pi_null: 0.0 };
        assert_eq!(pas_test_threeway(&h, &a), 0.0);
        let h = PosteriorSplit { pi_pos: 0.81, pi_neg: 0.09, pi_null: 0.10 };
        let a = PosteriorSplit { pi_pos: 0.70, pi_neg: 0.10, pi_null: 0.20 };
        // 0.567 + 0.009 + 0.020
        assert_relative_eq!(pas_test_threeway(&h, &a), 0.596, epsilon = 1e-12);
    }

    #[test]
    fn fisher_z_examples() {
        assert_relative_eq!(aggregate_fisher_z(&[0.37]), 0.37, epsilon = 1e-15);
        assert_relative_eq!(aggregate_fisher_z(&[0.8, 0.2]), 0.5, epsilon = 1e-15);
        let z = (0.8f64.atanh() + 0.2f64.atanh()) / 2.0;
        assert_relative_eq!(aggregate_fisher_z(&[0.9, 0.6]), (z.tanh() + 1.0) / 2.0, epsilon = 1e-15);
        assert!((aggregate_fisher_z(&[0.9, 0.6]) - 0.786).abs() < 5e-4);
        assert_eq!(aggregate_fisher_z(&[1.0]), 1.0 - 0.5e-12);
    }

    #[test]
    fn benchmark_examples() {
        assert_eq!(benchmark_pas(&[0.4]), 0.4);
        assert_relative_eq!(benchmark_pas(&[0.3, 0.5]), 0.4, epsilon = 1e-15);
    }

    #[test]
    fn self_match_reaches_self_agreement() {
        for name in ["false_consensus", "framing", "side_effect"] {
            let b = fixture(name);
            let human: Vec<TestOutcome> = b.tests().map(|(_, _, t)| human_outcome(t).unwrap().outcome).collect();
            let s = score_study(&b, &human, &PriorScales::default()).unwrap();
            let mut finding_scores = Vec::new();
            for f in &s.pas.children {
                let tests: Vec<f64> = f
                    .children
                    .iter()
                    .map(|t| {
                        let d = t.test.as_ref().unwrap();
                        match (&d.human.split, d.three_way) {
                            (Some(h), true) => h.as_array().iter().map(|x| x * x).sum(),
                            _ => d.human.evidence.pi.powi(2) + (1.0 - d.human.evidence.pi).powi(2),
                        }
                    })
                    .collect();
                finding_scores.push(aggregate_fisher_z(&tests));
            }
            assert!((s.value() - aggregate_fisher_z(&finding_scores)).abs() < 1e-9, "{name}");
        }
    }

    #[test]
    fn mismatched_count() {
        let b = fixture("framing");
        assert!(matches!(score_study(&b, &[], &PriorScales::default()), Err(AlignmentError::TestCountMismatch { .. })));
    }

    #[test]
    fn uncomputable_agent_scores_as_no_information() {
        let b = fixture("framing");
        let none = AgentOutcome { outcome: None, used: 0, excluded: 0, note: Some("zero margin".into()) };
        let s = score_study_outcomes(&b, &[none], &PriorScales::default()).unwrap();
        let t = s.pas.tests()[0].clone();
        assert_eq!(t.agent.evidence.pi, 0.5);
        assert!(t.flags.contains(&"agent_uncomputable".to_string()));
    }

    #[test]
    fn tree_reproduces_from_children_and_rescoring_is_stable() {
        let b = fixture("false_consensus");
        let human: Vec<TestOutcome> = b.tests().map(|(_, _, t)| human_outcome(t).unwrap().outcome).collect();
        let s = score_study(&b, &human, &PriorScales::default()).unwrap();
        assert_eq!(s.pas.recomputed(), s.pas.value);
        for f in &s.pas.children {
            assert_eq!(f.recomputed(), f.value);
        }
        assert_eq!(s.rescored(&PriorScales::default()).unwrap(), s);
        let agent = AgentScore::from_studies("self", vec![s]);
        assert_eq!(agent.pas_tree().recomputed(), agent.benchmark_pas);
    }

    proptest! {
        #[test]
        fn pas_symmetry_and_range(x in 0.0f64..=1.0, y in 0.0f64..=1.0) {
            prop_assert_eq!(pas_test(x, y), pas_test(y, x));
            prop_assert!((0.0..=1.0).contains(&pas_test(x, y)));
            prop_assert_eq!(pas_test(0.5, x), 0.5);
        }

        #[test]
        fn pas_monotone_toward_human(ph in 0.5f64..=1.0, a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(pas_test(ph, hi) >= pas_test(ph, lo) - 1e-15);
        }

        #[test]
        fn fisher_z_bounded_and_permutation_invariant(v in prop::collection::vec(0.0f64..=1.0, 1..12), seed in any::<u64>()) {
            let agg = aggregate_fisher_z(&v);
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(agg >= lo.max(PI_EPS / 2.0) - 1e-12 && agg <= hi.min(1.0 - PI_EPS / 2.0) + 1e-12);
            let mut w = v.clone();
            use rand::seq::SliceRandom;
            w.shuffle(&mut crate::rng::stream(seed, 0));
            prop_assert!((aggregate_fisher_z(&w) - agg).abs() < 1e-12);
        }
    }
}
