//! Participant allocation and trial construction.

use std::collections::BTreeMap;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::results::TrialInfo;
use super::HarnessError;
use crate::rng::{self, streams};
use crate::study::{DemographicAttribute, Design, Item, StudyBundle, SubStudy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub participant_id: String,
    pub sub_study_id: String,
    pub condition: String,
    pub trial_index: u32,
    pub instructions: String,
    pub text: String,
    pub items: Vec<Item>,
    #[serde(default)]
    pub profile: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backstory: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, Value>,
}

impl TrialSpec {
    pub fn trial_info(&self) -> TrialInfo {
        TrialInfo {
            sub_study_id: self.sub_study_id.clone(),
            condition: self.condition.clone(),
            trial_index: self.trial_index,
            q_ids: self.items.iter().map(|i| i.q_id.clone()).collect(),
            extra: self.extra.clone(),
        }
    }
}

/// One allocation unit: a between-subjects condition or a whole
/// within-subjects sub-study.
struct Cell<'a> {
    sub: &'a SubStudy,
    condition: Option<usize>,
    n: u64,
}

fn cells(bundle: &StudyBundle) -> Vec<Cell<'_>> {
    let mut subs: Vec<&SubStudy> = bundle.sub_studies.iter().collect();
    subs.sort_by(|a, b| a.sub_study_id.cmp(&b.sub_study_id));
    let mut out = Vec::new();
    for sub in subs {
        match sub.design {
            Design::Between => {
                for (i, c) in sub.conditions.iter().enumerate() {
                    out.push(Cell { sub, condition: Some(i), n: c.n });
                }
            }
            Design::Within => out.push(Cell { sub, condition: None, n: sub.declared_n() }),
        }
    }
    out
}

/// Largest-remainder apportionment of `n` over `weights`; ties go to the
/// earlier cell.
pub fn apportion(n: u64, weights: &[u64]) -> Vec<u64> {
    let total: u64 = weights.iter().sum();
    if total == 0 {
        return vec![0; weights.len()];
    }
    let mut alloc: Vec<u64> = weights.iter().map(|&w| (n as u128 * w as u128 / total as u128) as u64).collect();
    let mut rem: Vec<(u128, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| ((n as u128 * w as u128) % total as u128, i))
        .collect();
    rem.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let short = n - alloc.iter().sum::<u64>();
    for &(_, i) in rem.iter().take(short as usize) {
        alloc[i] += 1;
    }
    alloc
}

fn sample_attributes(attrs: &[DemographicAttribute], rng: &mut rng::Rng, into: &mut BTreeMap<String, String>) {
    for a in attrs {
        let weights: Vec<f64> = a.distribution.iter().map(|w| w.weight).collect();
        if let Ok(dist) = WeightedIndex::new(&weights) {
            into.insert(a.attribute.clone(), a.distribution[dist.sample(rng)].value.clone());
        }
    }
}

pub fn participant_label(index: usize, n: usize) -> String {
    let width = n.to_string().len().max(4);
    format!("P{:0width$}", index + 1)
}

/// Allocates `n_participants` to the bundle's cells in proportion to the
/// declared cell sizes and emits their trials, shuffled with `seed`.
pub fn build_trials(bundle: &StudyBundle, n_participants: Option<u64>, seed: u64) -> Result<Vec<TrialSpec>, HarnessError> {
    let cells = cells(bundle);
    let weights: Vec<u64> = cells.iter().map(|c| c.n).collect();
    if cells.is_empty() || weights.iter().sum::<u64>() == 0 {
        return Err(HarnessError::DesignUnderspecified(bundle.study_id.clone()));
    }
    let n = n_participants
        .or(bundle.participant_profile.as_ref().map(|p| p.n))
        .unwrap_or_else(|| weights.iter().sum());
    if n == 0 {
        return Err(HarnessError::DesignUnderspecified(format!("{}: zero participants", bundle.study_id)));
    }
    let alloc = apportion(n, &weights);
    let mut slots: Vec<usize> = alloc.iter().enumerate().flat_map(|(i, &k)| std::iter::repeat_n(i, k as usize)).collect();
    slots.shuffle(&mut rng::stream(seed, streams::ASSIGNMENT));

    let mut demo_rng = rng::stream(seed, streams::DEMOGRAPHICS);
    let profile = bundle.participant_profile.as_ref();
    let mut trials = Vec::new();
    for (p, &cell_index) in slots.iter().enumerate() {
        let cell = &cells[cell_index];
        let pid = participant_label(p, slots.len());
        let mut demo = BTreeMap::new();
        if let Some(prof) = profile {
            sample_attributes(&prof.demographics, &mut demo_rng, &mut demo);
            if let Some(over) = prof.by_sub_study.get(&cell.sub.sub_study_id) {
                sample_attributes(&over.demographics, &mut demo_rng, &mut demo);
            }
        }
        let conditions: Vec<usize> = match cell.condition {
            Some(i) => vec![i],
            None => (0..cell.sub.conditions.len()).collect(),
        };
        for (k, &ci) in conditions.iter().enumerate() {
            let cond = &cell.sub.conditions[ci];
            trials.push(TrialSpec {
                participant_id: pid.clone(),
                sub_study_id: cell.sub.sub_study_id.clone(),
                condition: cond.condition_id.clone(),
                trial_index: k as u32,
                instructions: cell.sub.instructions.clone(),
                text: cond.text.clone(),
                items: cond.items.clone(),
                profile: demo.clone(),
                backstory: None,
                extra: BTreeMap::new(),
            });
        }
    }
    Ok(trials)
}

/// Assigns backstories round-robin by participant order.
pub fn attach_backstories(trials: &mut [TrialSpec], backstories: &[String]) {
    if backstories.is_empty() {
        return;
    }
    let mut order: BTreeMap<String, usize> = BTreeMap::new();
    for t in trials.iter() {
        let next = order.len();
        order.entry(t.participant_id.clone()).or_insert(next);
    }
    for t in trials.iter_mut() {
        t.backstory = Some(backstories[order[&t.participant_id] % backstories.len()].clone());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::study::load_study_bundle;
    use proptest::prelude::*;
    use std::path::Path;

    fn fixture(name: &str) -> StudyBundle {
        load_study_bundle(Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)).unwrap()
    }

    #[test]
    fn framing_allocation_matches_declared_cells() {
        let trials = build_trials(&fixture("framing"), Some(307), 11).unwrap();
        let gain = trials.iter().filter(|t| t.condition == "gain").count();
        let loss = trials.iter().filter(|t| t.condition == "loss").count();
        assert_eq!((gain, loss), (152, 155));
    }

    #[test]
    fn single_participant_and_determinism() {
        let b = fixture("false_consensus");
        assert_eq!(build_trials(&b, Some(1), 3).unwrap().len(), 1);
        assert_eq!(build_trials(&b, Some(50), 3).unwrap(), build_trials(&b, Some(50), 3).unwrap());
        assert_ne!(build_trials(&b, Some(50), 3).unwrap(), build_trials(&b, Some(50), 4).unwrap());
    }

    #[test]
    fn demographics_are_sampled_from_profile() {
        let trials = build_trials(&fixture("false_consensus"), Some(20), 5).unwrap();
        assert!(trials.iter().all(|t| t.profile.contains_key("age") && t.profile["education"] == "college student"));
    }

    #[test]
    fn underspecified_design() {
        let mut b = fixture("framing");
        for c in &mut b.sub_studies[0].conditions {
            c.n = 0;
        }
        assert!(matches!(build_trials(&b, Some(10), 1), Err(HarnessError::DesignUnderspecified(_))));
    }

    proptest! {
        #[test]
        fn apportion_is_exact(n in 0u64..5000, w in prop::collection::vec(0u64..400, 1..8)) {
            let a = apportion(n, &w);
            if w.iter().sum::<u64>() > 0 {
                prop_assert_eq!(a.iter().sum::<u64>(), n);
                let total: u64 = w.iter().sum();
                for (ai, wi) in a.iter().zip(&w) {
                    let quota = n as f64 * *wi as f64 / total as f64;
                    prop_assert!((*ai as f64 - quota).abs() < 1.0);
                }
            }
        }
    }
}
