//! Test outcomes for both sides of a comparison: the human side from reported
//! statistics, the agent side by re-running each analysis on parsed responses.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::harness::{ParseFailPolicy, RunResults};
use crate::stats::{binomial_test, run_test};
use crate::stats::special::{chi2_sf, f_sf, normal_sf, t_two_sided_p};
use crate::stats::{DegenerateFlag, SampleData, TestFamily, TestOutcome};
use crate::study::StatKind;
use crate::study::{Analysis, GroundTruthTest, Grouping, ResponseSchema, StudyBundle};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvaluateError {
    #[error("{family} test cannot use a `{kind}` statistic")]
    StatisticMismatch { family: TestFamily, kind: String },
    #[error("reported statistic carries no effect information: {0}")]
    Uninformative(String),
    #[error("missing input: {0}")]
    Missing(String),
}

/// Human outcome plus whether it rests on an inequality bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanOutcome {
    pub outcome: TestOutcome,
    pub from_bound: bool,
}

fn kind_name(k: StatKind) -> String {
    serde_json::to_value(k).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

fn outcome(family: TestFamily, statistic: f64, df1: f64, df2: Option<f64>, p: f64, group_ns: Vec<u64>) -> TestOutcome {
    TestOutcome {
        family,
        statistic,
        df1,
        df2,
        p,
        group_ns,
        group_means: None,
        group_sds: None,
        degenerate: DegenerateFlag::None,
        effect_r: None,
        table: None,
        p0: None,
    }
}

/// Splits `n` into `k` near-equal integer parts, earlier parts taking the remainder.
fn split_n(n: u64, k: usize) -> Vec<u64> {
    let k = k.max(1) as u64;
    (0..k).map(|i| n / k + u64::from(i < n % k)).collect()
}

fn group_ns(test: &GroundTruthTest, k: usize, total: u64) -> Vec<u64> {
    let reported: Vec<u64> = test.raw_data.groups.iter().filter_map(|g| g.n).collect();
    if reported.len() == k && k > 0 {
        reported
    } else {
        split_n(total, k)
    }
}

fn group_means(test: &GroundTruthTest) -> Option<Vec<f64>> {
    let m: Option<Vec<f64>> = test.raw_data.groups.iter().map(|g| g.mean).collect();
    m.filter(|m| !m.is_empty())
}

fn analysis_arity(test: &GroundTruthTest) -> usize {
    match &test.analysis {
        Analysis::GroupCompare { groups, .. } | Analysis::Contingency { groups, .. } => groups.len().max(2),
        _ => 2,
    }
}

/// Rebuilds the human-side outcome from the parsed statistic, `raw_data`,
/// and `human_n`.
pub fn human_outcome(test: &GroundTruthTest) -> Result<HumanOutcome, EvaluateError> {
    let ps = &test.parsed_statistic;
    let family = test.test_family;
    let value = ps.point();
    let mismatch = || EvaluateError::StatisticMismatch { family, kind: kind_name(ps.kind) };
    if ps.kind == StatKind::P {
        return Err(EvaluateError::Uninformative(test.statistic_text.clone()));
    }
    if !value.is_finite() {
        return Err(EvaluateError::Missing(format!("statistic value in `{}`", test.statistic_text)));
    }
    let n = ps.n.unwrap_or(test.human_n);
    let out = match family {
        TestFamily::TIndependent => {
            if !matches!(ps.kind, StatKind::T | StatKind::Z) {
                return Err(mismatch());
            }
            let total = ps.df1.map_or(n, |df| df as u64 + 2);
            let ns = group_ns(test, 2, total);
            let df = (ns[0] + ns[1]) as f64 - 2.0;
            let mut o = outcome(family, value, df, None, t_two_sided_p(value, df), ns);
            o.group_means = group_means(test).filter(|m| m.len() == 2);
            o
        }
        TestFamily::TPaired | TestFamily::TOneSample => {
            if !matches!(ps.kind, StatKind::T | StatKind::Z) {
                return Err(mismatch());
            }
            let df = ps.df1.unwrap_or(n as f64 - 1.0);
            outcome(family, value, df, None, t_two_sided_p(value, df), vec![df as u64 + 1])
        }
        TestFamily::AnovaOneway => {
            let f = match ps.kind {
                StatKind::F => value,
                StatKind::T => value * value,
                _ => return Err(mismatch()),
            };
            let k = test.raw_data.groups.len().max(analysis_arity(test));
            let df1 = ps.df1.filter(|_| ps.kind == StatKind::F).unwrap_or(k as f64 - 1.0);
            // When df2 is reported, N = df1 + df2 + 1 keeps the sample consistent with the test.
            let df2 = ps.df2.unwrap_or(n as f64 - df1 - 1.0);
            let total = (df1 + df2 + 1.0).round() as u64;
            let k = (df1 as usize + 1).max(2);
            let mut o = outcome(family, f, df1, Some(df2), f_sf(f, df1, df2), group_ns(test, k, total));
            o.group_means = group_means(test).filter(|m| m.len() == k);
            if o.group_means.is_none() && ps.kind == StatKind::T && k == 2 {
                // Encode the sign of a reported t as ordered pseudo-means.
                o.group_means = Some(if value < 0.0 { vec![0.0, 1.0] } else { vec![1.0, 0.0] });
            }
            o
        }
        TestFamily::ChiSquare => {
            if ps.kind != StatKind::Chi2 {
                return Err(mismatch());
            }
            let table = test.raw_data.table.clone();
            let df = ps.df1.unwrap_or_else(|| match &table {
                Some(t) if !t.is_empty() => ((t.len() - 1) * (t[0].len().max(2) - 1)) as f64,
                _ => 1.0,
            });
            let ns = match &table {
                Some(t) => t.iter().map(|row| row.iter().sum()).collect(),
                None => vec![n],
            };
            let mut o = outcome(family, value, df, None, chi2_sf(value, df), ns);
            o.table = table;
            o
        }
        TestFamily::Binomial => {
            let p0 = test
                .raw_data
                .p0
                .or(match &test.analysis {
                    Analysis::Binomial { p0, .. } => Some(*p0),
                    _ => None,
                })
                .ok_or_else(|| EvaluateError::Missing("binomial baseline p0".into()))?;
            let trials = test.raw_data.trials.unwrap_or(n);
            let k = match (test.raw_data.successes, ps.kind) {
                (Some(k), _) => k,
                (None, StatKind::Proportion) => (value * trials as f64).round() as u64,
                _ => return Err(mismatch()),
            };
            binomial_test(k, trials, p0).map_err(|e| EvaluateError::Missing(e.to_string()))?
        }
        TestFamily::Correlation => {
            if ps.kind != StatKind::R {
                return Err(mismatch());
            }
            let n = ps.df1.map_or(n as f64, |df| df + 2.0);
            let r = value.clamp(-1.0, 1.0);
            let df = n - 2.0;
            let t = r * df.sqrt() / (1.0 - r * r).sqrt();
            let mut o = outcome(family, t, df, None, t_two_sided_p(t, df), vec![n as u64]);
            o.effect_r = Some(r);
            o
        }
        TestFamily::MannWhitney => {
            if ps.kind != StatKind::U {
                return Err(mismatch());
            }
            let ns = group_ns(test, 2, n);
            let (n1, n2) = (ns[0] as f64, ns[1] as f64);
            let mu = n1 * n2 / 2.0;
            let sigma = (n1 * n2 * (n1 + n2 + 1.0) / 12.0).sqrt();
            let p = (2.0 * normal_sf((value - mu).abs() / sigma)).min(1.0);
            let mut o = outcome(family, value, 1.0, None, p, ns);
            o.effect_r = Some(1.0 - 2.0 * value / (n1 * n2));
            o
        }
    };
    Ok(HumanOutcome { outcome: out, from_bound: ps.is_bound() })
}

/// Agent-side sample for one test together with listwise exclusion counts.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSample {
    pub data: SampleData,
    pub used: u64,
    pub excluded: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentOutcome {
    /// `None` when the analysis could not be computed on the agent data.
    pub outcome: Option<TestOutcome>,
    pub used: u64,
    pub excluded: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// One participant's answers within a sub-study.
struct Answers<'a> {
    conditions: Vec<&'a str>,
    values: BTreeMap<(&'a str, &'a str), &'a Value>,
}

impl<'a> Answers<'a> {
    /// `Qk` looks across the participant's trials; `condition/Qk` pins one.
    fn get(&self, key: &str) -> Option<&'a Value> {
        if let Some((c, q)) = key.split_once('/') {
            return self.values.get(&(c, q)).copied();
        }
        self.values.iter().find(|((_, q), _)| *q == key).map(|(_, v)| *v)
    }

    fn in_condition(&self, condition: &Option<String>) -> bool {
        condition.as_deref().is_none_or(|c| self.conditions.contains(&c))
    }
}

fn as_number(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn as_label(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn midpoint(bundle: &StudyBundle, sub_study: &str, key: &str) -> Option<f64> {
    let q = key.rsplit('/').next().unwrap_or(key);
    let sub = bundle.sub_study(sub_study)?;
    match &sub.item(q)?.schema {
        ResponseSchema::Scale { min, max } => Some((*min as f64 + *max as f64) / 2.0),
        ResponseSchema::Numeric { min: Some(lo), max: Some(hi) } => Some((lo + hi) / 2.0),
        _ => None,
    }
}

/// Collects the sample an analysis needs from a run, applying the
/// parse-failure policy.
pub fn agent_sample(
    bundle: &StudyBundle,
    test: &GroundTruthTest,
    results: &RunResults,
    policy: ParseFailPolicy,
) -> Result<AgentSample, EvaluateError> {
    let analysis = &test.analysis;
    let sub_id = analysis.sub_study();
    let people: Vec<Answers> = results
        .individual_data
        .iter()
        .filter_map(|p| {
            let rs: Vec<_> = p.responses.iter().filter(|r| r.trial_info.sub_study_id == sub_id).collect();
            if rs.is_empty() {
                return None;
            }
            let mut values = BTreeMap::new();
            for r in &rs {
                for (q, v) in &r.parsed {
                    values.insert((r.trial_info.condition.as_str(), q.as_str()), v);
                }
            }
            Some(Answers { conditions: rs.iter().map(|r| r.trial_info.condition.as_str()).collect(), values })
        })
        .collect();

    let number = |a: &Answers, key: &str| -> Option<f64> {
        match a.get(key).and_then(as_number) {
            Some(x) => Some(x),
            None if policy == ParseFailPolicy::ImputeMidpoint => midpoint(bundle, sub_id, key),
            None => None,
        }
    };
    let group_of = |a: &Answers, grouping: &Grouping| -> Option<String> {
        match grouping {
            Grouping::Condition => a.conditions.first().map(|c| c.to_string()),
            Grouping::Response { q_id } => a.get(q_id).map(as_label),
        }
    };
    let group_index = |a: &Answers, grouping: &Grouping, groups: &[String]| -> Option<Option<usize>> {
        // Some(None): in the sub-study but missing the grouping answer.
        match group_of(a, grouping) {
            Some(g) => groups.iter().position(|x| x.eq_ignore_ascii_case(&g)).map(Some),
            None => Some(None),
        }
    };

    let (mut used, mut excluded) = (0u64, 0u64);
    let data = match analysis {
        Analysis::GroupCompare { grouping, groups, measure, .. } => {
            let mut cols: Vec<(String, Vec<f64>)> = groups.iter().map(|g| (g.clone(), Vec::new())).collect();
            for a in &people {
                match group_index(a, grouping, groups) {
                    None => {}
                    Some(None) => excluded += 1,
                    Some(Some(i)) => match number(a, measure) {
                        Some(x) => {
                            cols[i].1.push(x);
                            used += 1;
                        }
                        None => excluded += 1,
                    },
                }
            }
            SampleData::Groups { groups: cols }
        }
        Analysis::Contingency { grouping, groups, outcome, categories, .. } => {
            let mut table = vec![vec![0u64; categories.len()]; groups.len()];
            for a in &people {
                match group_index(a, grouping, groups) {
                    None => {}
                    Some(None) => excluded += 1,
                    Some(Some(i)) => {
                        let cat = a.get(outcome).map(as_label);
                        match cat.and_then(|c| categories.iter().position(|x| x.eq_ignore_ascii_case(&c))) {
                            Some(j) => {
                                table[i][j] += 1;
                                used += 1;
                            }
                            None => excluded += 1,
                        }
                    }
                }
            }
            SampleData::Table { table }
        }
        Analysis::Binomial { condition, outcome, success, p0, .. } => {
            let mut k = 0;
            for a in people.iter().filter(|a| a.in_condition(condition)) {
                match a.get(outcome) {
                    Some(v) => {
                        used += 1;
                        k += u64::from(as_label(v).eq_ignore_ascii_case(success));
                    }
                    None => excluded += 1,
                }
            }
            SampleData::Binomial { successes: k, trials: used, p0: *p0 }
        }
        Analysis::OneSample { condition, measure, mu0, .. } => {
            let mut x = Vec::new();
            for a in people.iter().filter(|a| a.in_condition(condition)) {
                match number(a, measure) {
                    Some(v) => x.push(v),
                    None => excluded += 1,
                }
            }
            used = x.len() as u64;
            SampleData::OneSample { x, mu0: *mu0 }
        }
        Analysis::Correlation { x: kx, y: ky, .. } | Analysis::Paired { x: kx, y: ky, .. } => {
            let (mut x, mut y) = (Vec::new(), Vec::new());
            for a in &people {
                match (number(a, kx), number(a, ky)) {
                    (Some(u), Some(v)) => {
                        x.push(u);
                        y.push(v);
                    }
                    _ => excluded += 1,
                }
            }
            used = x.len() as u64;
            SampleData::Paired { x, y }
        }
    };
    Ok(AgentSample { data, used, excluded })
}

/// Re-runs a ground-truth test on agent data. Failures to compute are
/// reported through `note` rather than as errors.
pub fn agent_outcome(bundle: &StudyBundle, test: &GroundTruthTest, results: &RunResults, policy: ParseFailPolicy) -> AgentOutcome {
    match agent_sample(bundle, test, results, policy) {
        Ok(s) => match run_test(test.test_family, &s.data) {
            Ok(o) => AgentOutcome { outcome: Some(o), used: s.used, excluded: s.excluded, note: None },
            Err(e) => AgentOutcome { outcome: None, used: s.used, excluded: s.excluded, note: Some(e.to_string()) },
        },
        Err(e) => AgentOutcome { outcome: None, used: 0, excluded: 0, note: Some(e.to_string()) },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::backend::MockScripted;
    use crate::harness::{build_trials, execute_run, AgentSpec, RunOptions, Variant};
    use crate::study::load_study_bundle;
    use approx::assert_relative_eq;
    use std::path::Path;

    fn fixture(name: &str) -> StudyBundle {
        load_study_bundle(Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)).unwrap()
    }

    #[test]
    fn human_anova_uses_reported_dfs() {
        let b = fixture("false_consensus");
        let (_, _, t) = b.tests().next().unwrap();
        let h = human_outcome(t).unwrap().outcome;
        assert_eq!((h.df1, h.df2, h.total_n()), (1.0, Some(312.0), 314));
        assert_relative_eq!(h.statistic, 49.1);
        assert!(!h.sign_known());
    }

    #[test]
    fn human_anova_without_dfs_uses_human_n() {
        let b = fixture("false_consensus");
        let t = b.tests().find(|(_, _, t)| t.statistic_text == "F = 56.2").unwrap().2;
        let h = human_outcome(t).unwrap().outcome;
        assert_eq!((h.df1, h.df2, h.total_n()), (1.0, Some(102.0), 104));
    }

    #[test]
    fn human_chi_square_and_binomial() {
        let b = fixture("side_effect");
        let tests: Vec<_> = b.tests().map(|(_, _, t)| human_outcome(t).unwrap().outcome).collect();
        assert_eq!(tests[0].table.as_ref().unwrap(), &vec![vec![32, 7], vec![9, 30]]);
        assert_eq!(tests[0].total_n(), 78);
        let bin = tests.iter().find(|o| o.family == TestFamily::Binomial).unwrap();
        assert_relative_eq!(bin.statistic, 32.0 / 39.0);
        assert_eq!(bin.p0, Some(0.5));
    }

    #[test]
    fn bare_p_value_is_uninformative() {
        let b = fixture("framing");
        let mut t = b.tests().next().unwrap().2.clone();
        t.parsed_statistic = crate::study::parse_statistic_string("p < .001").unwrap();
        assert!(matches!(human_outcome(&t), Err(EvaluateError::Uninformative(_))));
    }

    #[test]
    fn agent_table_from_scripted_run() {
        let b = fixture("framing");
        let trials = build_trials(&b, Some(40), 1).unwrap();
        let mut backend = MockScripted::new("Q1=A");
        for t in trials.iter().filter(|t| t.condition == "loss") {
            backend.script.insert(format!("{}/0", t.participant_id), "Q1=B".into());
        }
        let mut opts = RunOptions::new("framing", 1);
        opts.backoff_base = std::time::Duration::ZERO;
        let r = execute_run(&trials, &AgentSpec::new(Variant::A1, "m", 1.0), &backend, &opts).unwrap();
        let test = b.tests().next().unwrap().2;
        let s = agent_sample(&b, test, &r, ParseFailPolicy::Exclude).unwrap();
        assert_eq!(s.data, SampleData::Table { table: vec![vec![20, 0], vec![0, 20]] });
        assert_eq!((s.used, s.excluded), (40, 0));
    }

    #[test]
    fn exclusions_and_midpoint_imputation() {
        let b = fixture("false_consensus");
        let trials = build_trials(&b, Some(30), 2).unwrap();
        let mut backend = MockScripted::new("Q1=A\nQ2=70\nQ3=40");
        let odd: Vec<String> = trials.iter().filter(|t| t.sub_study_id == "sub1").map(|t| t.participant_id.clone()).take(4).collect();
        for p in &odd[..2] {
            backend.script.insert(format!("{p}/0"), "Q1=B\nQ2=30\nQ3=60".into());
        }
        for p in &odd[2..] {
            backend.script.insert(format!("{p}/0"), "Q1=B".into());
        }
        let mut opts = RunOptions::new("false_consensus", 2);
        opts.backoff_base = std::time::Duration::ZERO;
        let r = execute_run(&trials, &AgentSpec::new(Variant::A1, "m", 1.0), &backend, &opts).unwrap();
        let test = b.tests().next().unwrap().2;
        let ex = agent_sample(&b, test, &r, ParseFailPolicy::Exclude).unwrap();
        assert_eq!(ex.excluded, 2);
        let imp = agent_sample(&b, test, &r, ParseFailPolicy::ImputeMidpoint).unwrap();
        assert_eq!(imp.excluded, 0);
        let SampleData::Groups { groups } = imp.data else { panic!() };
        assert_eq!(groups[1].1.iter().filter(|&&x| x == 50.0).count(), 2);
    }
}
