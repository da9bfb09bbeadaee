//! Synthetic agent populations with known true effects.

use std::collections::BTreeMap;

use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::alignment::{score_inputs, AlignmentError, FindingInput, TestInput};
use crate::evaluate::{agent_outcome, human_outcome, EvaluateError};
use crate::evidence::{jzs_log_bf, PriorScales};
use crate::harness::prompt::{AgentSpec, Variant};
use crate::harness::{ParseFailPolicy, ParseStatus, ParticipantRecord, ResponseRecord, RunMetadata, RunResults, TrialInfo};
use crate::rng::{self, streams, RNG_ALGORITHM};
use crate::stats::TestFamily;
use crate::study::{
    parse_statistic_string, Analysis, Condition, Design, Direction, Domain, Finding, GroundTruthTest, Grouping, Item,
    RawData, ResponseSchema, StudyBundle, SubStudy,
};

pub const SYNTH_SUB_STUDY: &str = "synth";
pub const SYNTH_STUDY_ID: &str = "synthetic";

/// Generative effect, by family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrueEffect {
    /// Standardized mean difference (t, F(1, ·), Mann-Whitney) or mean/SD for one-sample and paired.
    D { d: f64 },
    /// Population correlation.
    R { r: f64 },
    /// Success probability against a baseline.
    Proportion { p: f64, p0: f64 },
    /// P(first category) in the treatment and control groups.
    Cells { p: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthDesign {
    pub family: TestFamily,
    pub true_effect: TrueEffect,
    /// Total participants.
    pub n: u64,
    #[serde(default = "default_noise_sd")]
    pub noise_sd: f64,
    pub seed: u64,
}

fn default_noise_sd() -> f64 {
    1.0
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic design: {0}")]
    InvalidDesign(String),
    #[error(transparent)]
    Evaluate(#[from] EvaluateError),
    #[error(transparent)]
    Alignment(#[from] AlignmentError),
}

impl SynthDesign {
    pub fn new(family: TestFamily, true_effect: TrueEffect, n: u64, seed: u64) -> Self {
        SynthDesign { family, true_effect, n, noise_sd: 1.0, seed }
    }

    pub fn check(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidDesign(m));
        if self.n < 2 {
            return bad(format!("n = {} < 2", self.n));
        }
        if !(self.noise_sd > 0.0) {
            return bad("noise_sd must be positive".into());
        }
        let in_unit = |p: f64| p > 0.0 && p < 1.0;
        match (&self.true_effect, self.family) {
            (
                TrueEffect::D { d },
                TestFamily::TIndependent
                | TestFamily::AnovaOneway
                | TestFamily::MannWhitney
                | TestFamily::TPaired
                | TestFamily::TOneSample,
            ) if d.is_finite() => Ok(()),
            (TrueEffect::R { r }, TestFamily::Correlation) if r.abs() < 1.0 => Ok(()),
            (TrueEffect::Proportion { p, p0 }, TestFamily::Binomial) if in_unit(*p) && in_unit(*p0) => Ok(()),
            (TrueEffect::Cells { p }, TestFamily::ChiSquare) if p.len() == 2 && p.iter().all(|&x| in_unit(x)) => Ok(()),
            (e, f) => bad(format!("effect {e:?} does not fit family {f}")),
        }
    }

    fn two_groups(&self) -> bool {
        matches!(
            self.family,
            TestFamily::TIndependent | TestFamily::AnovaOneway | TestFamily::MannWhitney | TestFamily::ChiSquare
        )
    }
}

fn numeric(q: &str) -> Item {
    Item { q_id: q.into(), text: format!("Synthetic measure {q}"), schema: ResponseSchema::Numeric { min: None, max: None } }
}

fn yes_no() -> Item {
    Item { q_id: "Q1".into(), text: "Synthetic choice".into(), schema: ResponseSchema::Choice { options: vec!["yes".into(), "no".into()] } }
}

/// The sub-study layout synthetic responses follow.
pub fn synth_sub_study(design: &SynthDesign) -> SubStudy {
    let items = match design.family {
        TestFamily::ChiSquare | TestFamily::Binomial => vec![yes_no()],
        TestFamily::Correlation | TestFamily::TPaired => vec![numeric("Q1"), numeric("Q2")],
        _ => vec![numeric("Q1")],
    };
    let conditions = if design.two_groups() {
        let n1 = design.n / 2;
        vec![
            Condition { condition_id: "treatment".into(), n: n1, text: String::new(), items: items.clone() },
            Condition { condition_id: "control".into(), n: design.n - n1, text: String::new(), items },
        ]
    } else {
        vec![Condition { condition_id: "all".into(), n: design.n, text: String::new(), items }]
    };
    SubStudy {
        sub_study_id: SYNTH_SUB_STUDY.into(),
        description: String::new(),
        design: Design::Between,
        instructions: String::new(),
        conditions,
    }
}

pub fn synth_analysis(design: &SynthDesign) -> Analysis {
    let sub_study = SYNTH_SUB_STUDY.to_string();
    let groups = vec!["treatment".to_string(), "control".to_string()];
    match (&design.true_effect, design.family) {
        (_, TestFamily::ChiSquare) => Analysis::Contingency {
            sub_study,
            grouping: Grouping::Condition,
            groups,
            outcome: "Q1".into(),
            categories: vec!["yes".into(), "no".into()],
        },
        (TrueEffect::Proportion { p0, .. }, _) => {
            Analysis::Binomial { sub_study, condition: None, outcome: "Q1".into(), success: "yes".into(), p0: *p0 }
        }
        (_, TestFamily::Binomial) => {
            Analysis::Binomial { sub_study, condition: None, outcome: "Q1".into(), success: "yes".into(), p0: 0.5 }
        }
        (_, TestFamily::Correlation) => Analysis::Correlation { sub_study, x: "Q1".into(), y: "Q2".into() },
        (_, TestFamily::TPaired) => Analysis::Paired { sub_study, x: "Q1".into(), y: "Q2".into() },
        (_, TestFamily::TOneSample) => Analysis::OneSample { sub_study, condition: None, measure: "Q1".into(), mu0: 0.0 },
        _ => Analysis::GroupCompare { sub_study, grouping: Grouping::Condition, groups, measure: "Q1".into() },
    }
}

fn record(pid: String, condition: &str, answers: Vec<(&str, Value)>) -> ParticipantRecord {
    let text: Vec<String> = answers
        .iter()
        .map(|(q, v)| match v {
            Value::String(s) => format!("{q}={s}"),
            other => format!("{q}={other}"),
        })
        .collect();
    ParticipantRecord {
        participant_id: pid,
        profile: BTreeMap::new(),
        responses: vec![ResponseRecord {
            trial_info: TrialInfo {
                sub_study_id: SYNTH_SUB_STUDY.into(),
                condition: condition.into(),
                trial_index: 0,
                q_ids: answers.iter().map(|(q, _)| q.to_string()).collect(),
                extra: BTreeMap::new(),
            },
            response_text: text.join("\n"),
            parsed: answers.into_iter().map(|(q, v)| (q.to_string(), v)).collect(),
            status: ParseStatus::Ok,
            retries: 0,
            backend_id: Some("synthetic_oracle".into()),
            error: None,
        }],
    }
}

fn generate(design: &SynthDesign, r: &mut rng::Rng) -> Vec<ParticipantRecord> {
    let sd = design.noise_sd;
    let n = design.n as usize;
    let n1 = n / 2;
    let width = n.to_string().len().max(4);
    let pid = |i: usize| format!("S{:0width$}", i + 1);
    let noise = Normal::new(0.0, sd).expect("positive sd");
    let yes_no = |hit: bool| json!(if hit { "yes" } else { "no" });
    (0..n)
        .map(|i| match (&design.true_effect, design.family) {
            (TrueEffect::Cells { p }, _) => {
                let (cond, prob) = if i < n1 { ("treatment", p[0]) } else { ("control", p[1]) };
                record(pid(i), cond, vec![("Q1", yes_no(r.random::<f64>() < prob))])
            }
            (TrueEffect::Proportion { p, .. }, _) => record(pid(i), "all", vec![("Q1", yes_no(r.random::<f64>() < *p))]),
            (TrueEffect::R { r: rho }, _) => {
                let z1: f64 = StandardNormal.sample(r);
                let z2: f64 = StandardNormal.sample(r);
                let y = rho * z1 + (1.0 - rho * rho).sqrt() * z2;
                record(pid(i), "all", vec![("Q1", json!(z1 * sd)), ("Q2", json!(y * sd))])
            }
            (TrueEffect::D { d }, TestFamily::TPaired) => {
                let base = 50.0 + noise.sample(r);
                let diff = d * sd + noise.sample(r);
                record(pid(i), "all", vec![("Q1", json!(base + diff)), ("Q2", json!(base))])
            }
            (TrueEffect::D { d }, TestFamily::TOneSample) => record(pid(i), "all", vec![("Q1", json!(d * sd + noise.sample(r)))]),
            (TrueEffect::D { d }, _) => {
                let (cond, shift) = if i < n1 { ("treatment", d * sd) } else { ("control", 0.0) };
                record(pid(i), cond, vec![("Q1", json!(shift + noise.sample(r)))])
            }
        })
        .collect()
}

fn wrap(design: &SynthDesign, individual_data: Vec<ParticipantRecord>) -> RunResults {
    RunResults {
        study_id: SYNTH_STUDY_ID.into(),
        agent_id: "synthetic_oracle".into(),
        agent_spec: AgentSpec::new(Variant::A1, "synthetic_oracle", 0.0),
        individual_data,
        run_metadata: RunMetadata {
            seed: design.seed,
            rng: RNG_ALGORITHM.into(),
            backend_id: "synthetic_oracle".into(),
            started_at: None,
            finished_at: None,
            total_retries: 0,
            failed_trials: 0,
            on_parse_fail: ParseFailPolicy::Exclude,
        },
    }
}

/// Synthetic responses, already parsed, for the layout of [`synth_sub_study`].
pub fn synth_generate(design: &SynthDesign) -> Result<RunResults, SynthError> {
    synth_replicate(design, 0)
}

/// Replicate `rep` of a design; replicates use disjoint streams.
pub fn synth_replicate(design: &SynthDesign, rep: u64) -> Result<RunResults, SynthError> {
    design.check()?;
    let mut r = rng::stream(design.seed, streams::SYNTH + rep);
    Ok(wrap(design, generate(design, &mut r)))
}

/// A one-test bundle pairing the synthetic layout with a human statistic.
pub fn synth_bundle(design: &SynthDesign, statistic_text: &str, human_n: u64, direction: Direction) -> Result<StudyBundle, SynthError> {
    let parsed = parse_statistic_string(statistic_text).map_err(|e| SynthError::InvalidDesign(e.to_string()))?;
    let raw_data = match &design.true_effect {
        TrueEffect::Proportion { p0, .. } => RawData { p0: Some(*p0), ..RawData::default() },
        _ => RawData::default(),
    };
    let test = GroundTruthTest {
        finding_id: "F1".into(),
        test_name: format!("synthetic {}", design.family),
        test_family: design.family,
        statistic_text: statistic_text.into(),
        parsed_statistic: parsed,
        p_value_text: String::new(),
        raw_data,
        direction,
        human_n,
        claim: String::new(),
        location: String::new(),
        analysis: synth_analysis(design),
    };
    Ok(StudyBundle {
        study_id: SYNTH_STUDY_ID.into(),
        name: "Synthetic oracle study".into(),
        phenomenon: "synthetic".into(),
        domain: Domain::Cognition,
        findings: vec![Finding { finding_id: "F1".into(), hypothesis: String::new(), weight: 1.0, test_weights: vec![1.0], tests: vec![test] }],
        sub_studies: vec![synth_sub_study(design)],
        participant_profile: None,
        orphan_tests: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleDraw {
    pub pas: f64,
    /// Agreement of the BF > 1 decisions on both sides.
    pub hard: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub mean_pas: f64,
    pub sd_pas: f64,
    pub var_pas: f64,
    pub var_hard: f64,
    pub draws: Vec<OracleDraw>,
}

fn mean_var(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let m = xs.clone().sum::<f64>() / n;
    let v = if n > 1.0 { xs.map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, v)
}

/// Monte Carlo distribution of test-level PAS for synthetic agents scored
/// against one fixed human test.
pub fn oracle_expected_pas(
    design_agent: &SynthDesign,
    human_test: &GroundTruthTest,
    replications: usize,
    seed: u64,
    scales: &PriorScales,
) -> Result<OracleReport, SynthError> {
    design_agent.check()?;
    if replications == 0 {
        return Err(SynthError::InvalidDesign("replications must be at least 1".into()));
    }
    let mut test = human_test.clone();
    test.analysis = synth_analysis(design_agent);
    test.test_family = design_agent.family;
    let human = human_outcome(human_test)?;
    let mut bundle = synth_bundle(design_agent, "t = 0", 2, test.direction)?;
    bundle.findings[0].tests = vec![test.clone()];
    let design = SynthDesign { seed, ..design_agent.clone() };

    let draws: Vec<OracleDraw> = (0..replications as u64)
        .into_par_iter()
        .map(|rep| {
            let results = synth_replicate(&design, rep)?;
            let agent = agent_outcome(&bundle, &test, &results, ParseFailPolicy::Exclude);
            let finding = FindingInput {
                finding_id: "F1".into(),
                weight: 1.0,
                tests: vec![TestInput {
                    test_name: test.test_name.clone(),
                    family: human_test.test_family,
                    direction: test.direction,
                    human: human.clone(),
                    agent,
                }],
            };
            let s = score_inputs(SYNTH_STUDY_ID, "cognition", &[finding], scales)?;
            let t = s.pas.tests()[0].clone();
            let hard = f64::from((t.human.evidence.log_bf10 > 0.0) == (t.agent.evidence.log_bf10 > 0.0));
            Ok(OracleDraw { pas: s.value(), hard })
        })
        .collect::<Result<_, SynthError>>()?;
    let (mean_pas, var_pas) = mean_var(draws.iter().map(|d| d.pas));
    let (_, var_hard) = mean_var(draws.iter().map(|d| d.hard));
    Ok(OracleReport { mean_pas, sd_pas: var_pas.sqrt(), var_pas, var_hard, draws })
}

/// Standardized difference whose expected independent-groups t sits at
/// BF10 = 1 for total n split evenly.
pub fn boundary_d(n: u64, scale: f64) -> f64 {
    let n1 = (n / 2) as f64;
    let n2 = n as f64 - n1;
    let n_eff = n1 * n2 / (n1 + n2);
    let df = n1 + n2 - 2.0;
    let f = |t: f64| jzs_log_bf(t, n_eff, df, scale).expect("quadrature");
    let (mut lo, mut hi) = (0.0, 10.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi) * (1.0 / n1 + 1.0 / n2).sqrt()
}
