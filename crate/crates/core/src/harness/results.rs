//! Persisted run results (`results.json`).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::prompt::AgentSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Ok,
    ParsePartial,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParseFailPolicy {
    /// Drop the participant from every test that needs a missing value.
    #[default]
    Exclude,
    /// Re-dispatch a trial once when its response does not parse fully.
    RetryOnce,
    /// Fill missing scale or numeric answers with the range midpoint.
    ImputeMidpoint,
}

impl std::str::FromStr for ParseFailPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exclude" => Ok(ParseFailPolicy::Exclude),
            "retry-once" => Ok(ParseFailPolicy::RetryOnce),
            "impute-midpoint" => Ok(ParseFailPolicy::ImputeMidpoint),
            _ => Err(format!("unknown parse-failure policy `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialInfo {
    pub sub_study_id: String,
    pub condition: String,
    pub trial_index: u32,
    pub q_ids: Vec<String>,
    /// Opaque extras echoed from the trial spec.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub trial_info: TrialInfo,
    pub response_text: String,
    /// Coerced answers keyed by q_id: numbers for numeric and scale items,
    /// the matched option for choice items.
    pub parsed: BTreeMap<String, Value>,
    pub status: ParseStatus,
    #[serde(default)]
    pub retries: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantRecord {
    pub participant_id: String,
    #[serde(default)]
    pub profile: BTreeMap<String, String>,
    pub responses: Vec<ResponseRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub seed: u64,
    pub rng: String,
    pub backend_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started_at: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<String>,
    pub total_retries: u64,
    pub failed_trials: u64,
    #[serde(default)]
    pub on_parse_fail: ParseFailPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResults {
    pub study_id: String,
    /// Label used on leaderboards; defaults to `<model>/<variant>`.
    pub agent_id: String,
    pub agent_spec: AgentSpec,
    pub individual_data: Vec<ParticipantRecord>,
    pub run_metadata: RunMetadata,
}

impl RunResults {
    /// Canonical bytes of everything except timestamps.
    pub fn body_bytes(&self) -> String {
        let mut clone = self.clone();
        clone.run_metadata.started_at = None;
        clone.run_metadata.finished_at = None;
        crate::canonical::to_canonical_string(&clone).expect("results serialize")
    }

    pub fn to_canonical_json(&self) -> String {
        crate::canonical::to_canonical_string(self).expect("results serialize")
    }
}
