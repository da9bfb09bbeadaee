//! Study bundles: reconstructed protocols, ground-truth tests and weights.
//!
//! On disk a bundle is a directory holding `metadata.json`,
//! `ground_truth.json`, `materials/<sub_study_id>.json` and optionally
//! `specification.json`. JSON Schemas for each file live in `schemas/`.

mod parse;

pub use parse::{parse_statistic_string, Inequality, ParsedStatistic, StatKind, UnparsableStatistic};

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::TestFamily;

const WEIGHT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Cognition,
    Strategic,
    Social,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Cognition => "cognition",
            Domain::Strategic => "strategic",
            Domain::Social => "social",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Positive,
    Negative,
    #[default]
    TwoSided,
}

impl Direction {
    /// +1 for positive and two-sided, −1 for negative.
    pub fn sign(self) -> f64 {
        match self {
            Direction::Negative => -1.0,
            _ => 1.0,
        }
    }

    pub fn is_directional(self) -> bool {
        self != Direction::TwoSided
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyBundle {
    pub study_id: String,
    #[serde(default)]
    pub name: String,
    pub phenomenon: String,
    pub domain: Domain,
    pub findings: Vec<Finding>,
    pub sub_studies: Vec<SubStudy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub participant_profile: Option<ParticipantProfile>,
    /// Ground-truth tests whose `finding_id` matched no finding.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub orphan_tests: Vec<GroundTruthTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub finding_id: String,
    #[serde(default)]
    pub hypothesis: String,
    pub weight: f64,
    pub test_weights: Vec<f64>,
    pub tests: Vec<GroundTruthTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthTest {
    pub finding_id: String,
    pub test_name: String,
    pub test_family: TestFamily,
    pub statistic_text: String,
    pub parsed_statistic: ParsedStatistic,
    #[serde(default)]
    pub p_value_text: String,
    #[serde(default)]
    pub raw_data: RawData,
    #[serde(default)]
    pub direction: Direction,
    pub human_n: u64,
    #[serde(default)]
    pub claim: String,
    #[serde(default)]
    pub location: String,
    pub analysis: Analysis,
}

/// Human-side summaries as reported or reconstructed.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RawData {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub groups: Vec<GroupSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<Vec<u64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub successes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p0: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
}

/// How participants are split into the groups a test compares.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "by", rename_all = "snake_case")]
pub enum Grouping {
    Condition,
    Response { q_id: String },
}

/// Recipe for recomputing a ground-truth test from agent responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Analysis {
    GroupCompare {
        sub_study: String,
        grouping: Grouping,
        groups: Vec<String>,
        measure: String,
    },
    Contingency {
        sub_study: String,
        grouping: Grouping,
        groups: Vec<String>,
        outcome: String,
        categories: Vec<String>,
    },
    Binomial {
        sub_study: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        condition: Option<String>,
        outcome: String,
        success: String,
        p0: f64,
    },
    Correlation {
        sub_study: String,
        x: String,
        y: String,
    },
    OneSample {
        sub_study: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        condition: Option<String>,
        measure: String,
        mu0: f64,
    },
    Paired {
        sub_study: String,
        x: String,
        y: String,
    },
}

impl Analysis {
    pub fn sub_study(&self) -> &str {
        match self {
            Analysis::GroupCompare { sub_study, .. }
            | Analysis::Contingency { sub_study, .. }
            | Analysis::Binomial { sub_study, .. }
            | Analysis::Correlation { sub_study, .. }
            | Analysis::OneSample { sub_study, .. }
            | Analysis::Paired { sub_study, .. } => sub_study,
        }
    }

    /// Item ids the analysis reads.
    pub fn q_ids(&self) -> Vec<&str> {
        let mut out = Vec::new();
        fn grouping_q(g: &Grouping) -> Option<&str> {
            match g {
                Grouping::Response { q_id } => Some(q_id.as_str()),
                Grouping::Condition => None,
            }
        }
        match self {
            Analysis::GroupCompare { grouping, measure, .. } => {
                out.extend(grouping_q(grouping));
                out.push(measure.as_str());
            }
            Analysis::Contingency { grouping, outcome, .. } => {
                out.extend(grouping_q(grouping));
                out.push(outcome.as_str());
            }
            Analysis::Binomial { outcome, .. } => out.push(outcome.as_str()),
            Analysis::OneSample { measure, .. } => out.push(measure.as_str()),
            Analysis::Correlation { x, y, .. } | Analysis::Paired { x, y, .. } => {
                out.push(x.as_str());
                out.push(y.as_str());
            }
        }
        out
    }

    fn conditions(&self) -> Vec<&str> {
        match self {
            Analysis::GroupCompare { grouping: Grouping::Condition, groups, .. }
            | Analysis::Contingency { grouping: Grouping::Condition, groups, .. } => {
                groups.iter().map(String::as_str).collect()
            }
            Analysis::Binomial { condition: Some(c), .. } | Analysis::OneSample { condition: Some(c), .. } => {
                vec![c.as_str()]
            }
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    #[default]
    Between,
    /// Every participant sees every condition, in declared order.
    Within,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubStudy {
    pub sub_study_id: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub design: Design,
    #[serde(default)]
    pub instructions: String,
    pub conditions: Vec<Condition>,
}

impl SubStudy {
    pub fn item(&self, q_id: &str) -> Option<&Item> {
        self.conditions.iter().flat_map(|c| &c.items).find(|i| i.q_id == q_id)
    }

    /// Participants declared for this sub-study.
    pub fn declared_n(&self) -> u64 {
        match self.design {
            Design::Between => self.conditions.iter().map(|c| c.n).sum(),
            Design::Within => self.conditions.iter().map(|c| c.n).max().unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub condition_id: String,
    pub n: u64,
    #[serde(default)]
    pub text: String,
    pub items: Vec<Item>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub q_id: String,
    pub text: String,
    pub schema: ResponseSchema,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ResponseSchema {
    Numeric {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        min: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max: Option<f64>,
    },
    Choice {
        options: Vec<String>,
    },
    Scale {
        min: i64,
        max: i64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantProfile {
    pub n: u64,
    #[serde(default)]
    pub demographics: Vec<DemographicAttribute>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub by_sub_study: BTreeMap<String, SubStudyParticipants>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemographicAttribute {
    pub attribute: String,
    pub distribution: Vec<WeightedValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedValue {
    pub value: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubStudyParticipants {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub demographics: Vec<DemographicAttribute>,
}

/// Finding- and test-level weights, as consumed by aggregation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WeightsSpec {
    pub finding_weights: BTreeMap<String, f64>,
    pub test_weights: BTreeMap<String, Vec<f64>>,
}

impl StudyBundle {
    pub fn weights(&self) -> WeightsSpec {
        WeightsSpec {
            finding_weights: self.findings.iter().map(|f| (f.finding_id.clone(), f.weight)).collect(),
            test_weights: self.findings.iter().map(|f| (f.finding_id.clone(), f.test_weights.clone())).collect(),
        }
    }

    pub fn sub_study(&self, id: &str) -> Option<&SubStudy> {
        self.sub_studies.iter().find(|s| s.sub_study_id == id)
    }

    pub fn tests(&self) -> impl Iterator<Item = (&Finding, usize, &GroundTruthTest)> {
        self.findings
            .iter()
            .flat_map(|f| f.tests.iter().enumerate().map(move |(i, t)| (f, i, t)))
    }

    pub fn test_count(&self) -> usize {
        self.findings.iter().map(|f| f.tests.len()).sum()
    }

    pub fn to_canonical_json(&self) -> String {
        crate::canonical::to_canonical_string(self).expect("bundle serializes")
    }
}

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("missing file {}", path.display())]
    MissingFile { path: PathBuf },
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: schema violation at {path}: {message}")]
    SchemaViolation { file: String, path: String, message: String },
    #[error("test at {path} references unknown finding `{finding_id}`")]
    DanglingFindingRef { finding_id: String, path: String },
    #[error("{path}: {source}")]
    UnparsableStatistic {
        path: String,
        #[source]
        source: UnparsableStatistic,
    },
    #[error("duplicate study id `{0}`")]
    DuplicateStudyId(String),
}

// On-disk document shapes.

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetadataFile {
    study_id: String,
    #[serde(default)]
    name: String,
    phenomenon: String,
    domain: Domain,
    findings: Vec<MetadataFinding>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetadataFinding {
    finding_id: String,
    #[serde(default)]
    weight: Option<f64>,
    #[serde(default)]
    test_weights: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
struct GroundTruthFile {
    studies: Vec<GroundTruthStudy>,
}

#[derive(Debug, Deserialize)]
struct GroundTruthStudy {
    #[serde(default)]
    #[allow(dead_code)]
    study_id: String,
    #[serde(default)]
    findings: Vec<GroundTruthFinding>,
    sub_studies: Vec<GroundTruthSubStudy>,
}

#[derive(Debug, Deserialize)]
struct GroundTruthFinding {
    finding_id: String,
    #[serde(default)]
    hypothesis: String,
}

#[derive(Debug, Deserialize)]
struct GroundTruthSubStudy {
    #[serde(default)]
    #[allow(dead_code)]
    sub_study_id: String,
    human_data: HumanData,
}

#[derive(Debug, Deserialize)]
struct HumanData {
    statistical_results: Vec<StatisticalResult>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StatisticalResult {
    finding_id: String,
    test_name: String,
    statistic: String,
    #[serde(default)]
    p_value: String,
    #[serde(default)]
    raw_data: RawData,
    #[serde(default)]
    claim: String,
    #[serde(default)]
    location: String,
    test_family: TestFamily,
    #[serde(default)]
    direction: Direction,
    human_n: u64,
    analysis: Analysis,
}

#[derive(Debug, Deserialize)]
struct SpecificationFile {
    participants: ParticipantProfile,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, StudyError> {
    if !path.is_file() {
        return Err(StudyError::MissingFile { path: path.to_path_buf() });
    }
    let text = fs::read_to_string(path).map_err(|source| StudyError::Io { path: path.to_path_buf(), source })?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| StudyError::SchemaViolation {
        file: path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

/// Reads, assembles and validates one bundle directory.
pub fn load_study_bundle(dir: impl AsRef<Path>) -> Result<StudyBundle, StudyError> {
    let bundle = read_study_bundle(dir)?;
    let report = validate_bundle(&bundle);
    if let Some(v) = report.violations.iter().find(|v| v.code == ViolationCode::DanglingRef) {
        return Err(StudyError::DanglingFindingRef {
            finding_id: v.detail.clone(),
            path: v.path.clone(),
        });
    }
    if let Some(v) = report.violations.first() {
        return Err(StudyError::SchemaViolation {
            file: bundle.study_id.clone(),
            path: v.path.clone(),
            message: format!("{}: {}", v.code.as_str(), v.detail),
        });
    }
    Ok(bundle)
}

/// Reads and assembles a bundle without rejecting invariant violations.
pub fn read_study_bundle(dir: impl AsRef<Path>) -> Result<StudyBundle, StudyError> {
    let dir = dir.as_ref();
    let meta: MetadataFile = read_json(&dir.join("metadata.json"))?;
    let truth: GroundTruthFile = read_json(&dir.join("ground_truth.json"))?;
    let materials_dir = dir.join("materials");
    if !materials_dir.is_dir() {
        return Err(StudyError::MissingFile { path: materials_dir });
    }
    let mut material_paths: Vec<PathBuf> = fs::read_dir(&materials_dir)
        .map_err(|source| StudyError::Io { path: materials_dir.clone(), source })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    material_paths.sort();
    let sub_studies = material_paths
        .iter()
        .map(|p| read_json::<SubStudy>(p))
        .collect::<Result<Vec<_>, _>>()?;
    let spec_path = dir.join("specification.json");
    let participant_profile = if spec_path.is_file() {
        Some(read_json::<SpecificationFile>(&spec_path)?.participants)
    } else {
        None
    };

    let hypotheses: BTreeMap<&str, &str> = truth
        .studies
        .iter()
        .flat_map(|s| &s.findings)
        .map(|f| (f.finding_id.as_str(), f.hypothesis.as_str()))
        .collect();
    let n_findings = meta.findings.len().max(1) as f64;
    let mut findings: Vec<Finding> = meta
        .findings
        .iter()
        .map(|f| Finding {
            finding_id: f.finding_id.clone(),
            hypothesis: hypotheses.get(f.finding_id.as_str()).unwrap_or(&"").to_string(),
            weight: f.weight.unwrap_or(1.0 / n_findings),
            test_weights: f.test_weights.clone().unwrap_or_default(),
            tests: Vec::new(),
        })
        .collect();
    let mut orphan_tests = Vec::new();
    for (si, study) in truth.studies.iter().enumerate() {
        for (ssi, sub) in study.sub_studies.iter().enumerate() {
            for (ri, r) in sub.human_data.statistical_results.iter().enumerate() {
                let path = format!("studies[{si}].sub_studies[{ssi}].human_data.statistical_results[{ri}].statistic");
                let parsed_statistic = parse_statistic_string(&r.statistic)
                    .map_err(|source| StudyError::UnparsableStatistic { path, source })?;
                let test = GroundTruthTest {
                    finding_id: r.finding_id.clone(),
                    test_name: r.test_name.clone(),
                    test_family: r.test_family,
                    statistic_text: r.statistic.clone(),
                    parsed_statistic,
                    p_value_text: r.p_value.clone(),
                    raw_data: r.raw_data.clone(),
                    direction: r.direction,
                    human_n: r.human_n,
                    claim: r.claim.clone(),
                    location: r.location.clone(),
                    analysis: r.analysis.clone(),
                };
                match findings.iter_mut().find(|f| f.finding_id == r.finding_id) {
                    Some(f) => f.tests.push(test),
                    None => orphan_tests.push(test),
                }
            }
        }
    }
    for f in &mut findings {
        if f.test_weights.is_empty() && !f.tests.is_empty() {
            f.test_weights = vec![1.0 / f.tests.len() as f64; f.tests.len()];
        }
    }
    Ok(StudyBundle {
        study_id: meta.study_id,
        name: meta.name,
        phenomenon: meta.phenomenon,
        domain: meta.domain,
        findings,
        sub_studies,
        participant_profile,
        orphan_tests,
    })
}

/// Loads every bundle directory under `root` (those holding a metadata.json),
/// sorted by directory name.
pub fn load_benchmark(root: impl AsRef<Path>) -> Result<Vec<StudyBundle>, StudyError> {
    let root = root.as_ref();
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|source| StudyError::Io { path: root.to_path_buf(), source })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("metadata.json").is_file())
        .collect();
    dirs.sort();
    let bundles = dirs.iter().map(load_study_bundle).collect::<Result<Vec<_>, _>>()?;
    let mut seen = BTreeSet::new();
    for b in &bundles {
        if !seen.insert(b.study_id.as_str()) {
            return Err(StudyError::DuplicateStudyId(b.study_id.clone()));
        }
    }
    Ok(bundles)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationCode {
    EmptyStudyId,
    DuplicateId,
    DanglingRef,
    EmptyFinding,
    WeightRange,
    WeightSum,
    TestWeightSum,
    HumanN,
    StatisticFamilyMismatch,
    ArityMismatch,
    MissingBaseline,
    UnknownSubStudy,
    UnknownCondition,
    UnknownItem,
    ProfileWeights,
    ProfileN,
}

impl ViolationCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationCode::EmptyStudyId => "EMPTY_STUDY_ID",
            ViolationCode::DuplicateId => "DUPLICATE_ID",
            ViolationCode::DanglingRef => "DANGLING_REF",
            ViolationCode::EmptyFinding => "EMPTY_FINDING",
            ViolationCode::WeightRange => "WEIGHT_RANGE",
            ViolationCode::WeightSum => "WEIGHT_SUM",
            ViolationCode::TestWeightSum => "TEST_WEIGHT_SUM",
            ViolationCode::HumanN => "HUMAN_N",
            ViolationCode::StatisticFamilyMismatch => "STATISTIC_FAMILY_MISMATCH",
            ViolationCode::ArityMismatch => "ARITY_MISMATCH",
            ViolationCode::MissingBaseline => "MISSING_BASELINE",
            ViolationCode::UnknownSubStudy => "UNKNOWN_SUB_STUDY",
            ViolationCode::UnknownCondition => "UNKNOWN_CONDITION",
            ViolationCode::UnknownItem => "UNKNOWN_ITEM",
            ViolationCode::ProfileWeights => "PROFILE_WEIGHTS",
            ViolationCode::ProfileN => "PROFILE_N",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    /// JSON path into the canonical bundle document.
    pub path: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub study_id: String,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn codes(&self) -> Vec<ViolationCode> {
        self.violations.iter().map(|v| v.code).collect()
    }

    fn push(&mut self, code: ViolationCode, path: impl Into<String>, detail: impl Into<String>) {
        self.violations.push(Violation { code, path: path.into(), detail: detail.into() });
    }
}

fn statistic_fits_family(kind: StatKind, family: TestFamily) -> bool {
    use StatKind as K;
    use TestFamily as T;
    match family {
        T::TIndependent | T::TPaired | T::TOneSample => matches!(kind, K::T | K::Z),
        T::AnovaOneway => kind == K::F,
        T::ChiSquare => kind == K::Chi2,
        T::Binomial => matches!(kind, K::Proportion | K::Z),
        T::Correlation => kind == K::R,
        T::MannWhitney => matches!(kind, K::U | K::Z),
    }
}

pub fn validate_bundle(bundle: &StudyBundle) -> ValidationReport {
    let mut report = ValidationReport { study_id: bundle.study_id.clone(), ..Default::default() };
    if bundle.study_id.trim().is_empty() {
        report.push(ViolationCode::EmptyStudyId, "$.study_id", "study_id is empty");
    }

    let mut finding_ids = BTreeSet::new();
    for (fi, f) in bundle.findings.iter().enumerate() {
        if !finding_ids.insert(f.finding_id.as_str()) {
            report.push(ViolationCode::DuplicateId, format!("$.findings[{fi}].finding_id"), f.finding_id.clone());
        }
    }
    let mut sub_ids = BTreeSet::new();
    for (si, s) in bundle.sub_studies.iter().enumerate() {
        if !sub_ids.insert(s.sub_study_id.as_str()) {
            report.push(ViolationCode::DuplicateId, format!("$.sub_studies[{si}].sub_study_id"), s.sub_study_id.clone());
        }
    }

    for (ti, t) in bundle.orphan_tests.iter().enumerate() {
        report.push(ViolationCode::DanglingRef, format!("$.orphan_tests[{ti}].finding_id"), t.finding_id.clone());
    }

    let weight_sum: f64 = bundle.findings.iter().map(|f| f.weight).sum();
    if !bundle.findings.is_empty() && (weight_sum - 1.0).abs() > WEIGHT_TOL {
        report.push(ViolationCode::WeightSum, "$.findings[*].weight", format!("finding weights sum to {weight_sum}"));
    }

    for (fi, f) in bundle.findings.iter().enumerate() {
        let fpath = format!("$.findings[{fi}]");
        if !(f.weight > 0.0 && f.weight <= 1.0) {
            report.push(ViolationCode::WeightRange, format!("{fpath}.weight"), format!("weight {} outside (0, 1]", f.weight));
        }
        if f.tests.is_empty() {
            report.push(ViolationCode::EmptyFinding, format!("{fpath}.tests"), f.finding_id.clone());
            continue;
        }
        let tw_sum: f64 = f.test_weights.iter().sum();
        if f.test_weights.len() != f.tests.len() || (tw_sum - 1.0).abs() > WEIGHT_TOL {
            report.push(
                ViolationCode::TestWeightSum,
                format!("{fpath}.test_weights"),
                format!("{} weights summing to {tw_sum} for {} tests", f.test_weights.len(), f.tests.len()),
            );
        }
        for (ti, t) in f.tests.iter().enumerate() {
            validate_test(bundle, t, &format!("{fpath}.tests[{ti}]"), &f.finding_id, &mut report);
        }
    }

    if let Some(p) = &bundle.participant_profile {
        if p.n < 1 {
            report.push(ViolationCode::ProfileN, "$.participant_profile.n", "n must be at least 1");
        }
        let mut check = |attrs: &[DemographicAttribute], base: String| {
            for (ai, a) in attrs.iter().enumerate() {
                let s: f64 = a.distribution.iter().map(|w| w.weight).sum();
                if (s - 1.0).abs() > WEIGHT_TOL || a.distribution.iter().any(|w| w.weight < 0.0) {
                    report.push(
                        ViolationCode::ProfileWeights,
                        format!("{base}[{ai}].distribution"),
                        format!("`{}` weights sum to {s}", a.attribute),
                    );
                }
            }
        };
        check(&p.demographics, "$.participant_profile.demographics".to_string());
        for (k, sp) in &p.by_sub_study {
            check(&sp.demographics, format!("$.participant_profile.by_sub_study.{k}.demographics"));
        }
    }
    report
}

fn validate_test(bundle: &StudyBundle, t: &GroundTruthTest, path: &str, finding_id: &str, report: &mut ValidationReport) {
    if t.finding_id != finding_id {
        report.push(ViolationCode::DanglingRef, format!("{path}.finding_id"), t.finding_id.clone());
    }
    if t.human_n < 2 {
        report.push(ViolationCode::HumanN, format!("{path}.human_n"), format!("human_n = {}", t.human_n));
    }
    if !statistic_fits_family(t.parsed_statistic.kind, t.test_family) {
        report.push(
            ViolationCode::StatisticFamilyMismatch,
            format!("{path}.parsed_statistic.kind"),
            format!("{:?} statistic for {} test", t.parsed_statistic.kind, t.test_family),
        );
    }
    let raw = &t.raw_data;
    let groups = raw.groups.len();
    let arity_ok = match t.test_family {
        TestFamily::TIndependent | TestFamily::MannWhitney => groups == 0 || groups == 2,
        TestFamily::AnovaOneway => groups != 1,
        TestFamily::ChiSquare => raw
            .table
            .as_ref()
            .is_none_or(|tb| tb.len() >= 2 && tb.iter().all(|r| r.len() == tb[0].len() && r.len() >= 2)),
        _ => true,
    };
    if !arity_ok {
        report.push(ViolationCode::ArityMismatch, format!("{path}.raw_data"), format!("{groups} groups for {}", t.test_family));
    }
    if t.test_family == TestFamily::Binomial {
        match raw.p0 {
            None => report.push(ViolationCode::MissingBaseline, format!("{path}.raw_data.p0"), "binomial test needs p0"),
            Some(p0) if !(p0 > 0.0 && p0 < 1.0) => {
                report.push(ViolationCode::MissingBaseline, format!("{path}.raw_data.p0"), format!("p0 = {p0}"))
            }
            _ => {}
        }
    }

    let apath = format!("{path}.analysis");
    let Some(sub) = bundle.sub_study(t.analysis.sub_study()) else {
        report.push(ViolationCode::UnknownSubStudy, format!("{apath}.sub_study"), t.analysis.sub_study().to_string());
        return;
    };
    for q in t.analysis.q_ids() {
        if sub.item(q).is_none() {
            report.push(ViolationCode::UnknownItem, apath.clone(), format!("{q} not in {}", sub.sub_study_id));
        }
    }
    for c in t.analysis.conditions() {
        if !sub.conditions.iter().any(|x| x.condition_id == c) {
            report.push(ViolationCode::UnknownCondition, apath.clone(), format!("{c} not in {}", sub.sub_study_id));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(name: &str) -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
    }

    #[test]
    fn loads_false_consensus_fixture() {
        let b = load_study_bundle(fixture("false_consensus")).unwrap();
        assert!(b.tests().any(|(_, _, t)| t.statistic_text == "F(1, 312) = 49.1"));
        assert!(validate_bundle(&b).is_ok());
    }

    #[test]
    fn every_fixture_is_valid_and_round_trips() {
        for name in ["false_consensus", "framing", "side_effect"] {
            let b = load_study_bundle(fixture(name)).unwrap();
            assert!(validate_bundle(&b).is_ok(), "{name}");
            let a = b.to_canonical_json();
            let back: StudyBundle = serde_json::from_str(&a).unwrap();
            assert_eq!(back.to_canonical_json(), a, "{name}");
            let w: f64 = b.findings.iter().map(|f| f.weight).sum();
            assert!((w - 1.0).abs() <= WEIGHT_TOL);
        }
    }

    #[test]
    fn missing_ground_truth_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        for entry in fs::read_dir(fixture("framing")).unwrap() {
            let p = entry.unwrap().path();
            if p.is_file() && p.file_name().unwrap() != "ground_truth.json" {
                fs::copy(&p, dir.path().join(p.file_name().unwrap())).unwrap();
            }
        }
        fs::create_dir(dir.path().join("materials")).unwrap();
        match load_study_bundle(dir.path()) {
            Err(StudyError::MissingFile { path }) => assert!(path.ends_with("ground_truth.json")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_weights_are_a_schema_violation() {
        let mut b = load_study_bundle(fixture("false_consensus")).unwrap();
        b.findings[0].weight = 0.5;
        b.findings[1].weight = 0.6;
        assert!(validate_bundle(&b).codes().contains(&ViolationCode::WeightSum));
    }

    #[test]
    fn dangling_and_baseline_codes() {
        let mut b = load_study_bundle(fixture("side_effect")).unwrap();
        let mut orphan = b.findings[0].tests[0].clone();
        orphan.finding_id = "F9".into();
        b.orphan_tests.push(orphan);
        let binom = b.findings.iter_mut().flat_map(|f| &mut f.tests).find(|t| t.test_family == TestFamily::Binomial).unwrap();
        binom.raw_data.p0 = None;
        let report = validate_bundle(&b);
        assert!(report.codes().contains(&ViolationCode::DanglingRef));
        assert!(report.codes().contains(&ViolationCode::MissingBaseline));
        let dangling = report.violations.iter().find(|v| v.code == ViolationCode::DanglingRef).unwrap();
        assert_eq!(dangling.detail, "F9");
    }

    #[test]
    fn schema_errors_carry_field_paths() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("metadata.json"),
            r#"{"study_id":"x","phenomenon":"p","domain":"cognition","findings":[{"finding_id":"F1","weight":"heavy"}]}"#,
        )
        .unwrap();
        match load_study_bundle(dir.path()) {
            Err(StudyError::SchemaViolation { path, .. }) => assert_eq!(path, "findings[0].weight"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
