//! Agent specification variants and prompt rendering.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::trials::TrialSpec;
use super::HarnessError;
use crate::study::ResponseSchema;

pub const ROLE_SENTENCE: &str = "You are participating in a psychology experiment as a human participant.";

const DISCIPLINE: &str = "Follow the experimenter's instructions and answer each task in the requested format.\n\
Be concise. Do not add extra explanations unless explicitly asked.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    A1,
    A2,
    A3,
    A4,
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "A1" => Ok(Variant::A1),
            "A2" => Ok(Variant::A2),
            "A3" => Ok(Variant::A3),
            "A4" => Ok(Variant::A4),
            _ => Err(format!("unknown agent variant `{s}`")),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demographics {
    pub age: String,
    pub gender: String,
    pub education: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occupation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub variant: Variant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demographics: Option<Demographics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backstory: Option<String>,
    pub temperature: f64,
    pub model_id: String,
}

impl AgentSpec {
    pub fn new(variant: Variant, model_id: impl Into<String>, temperature: f64) -> Self {
        AgentSpec { variant, demographics: None, backstory: None, temperature, model_id: model_id.into() }
    }

    pub fn check(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::InvalidAgentSpec(m.to_string()));
        if !(self.temperature >= 0.0) {
            return bad("temperature must be non-negative");
        }
        match self.variant {
            Variant::A3 if self.demographics.is_none() => bad("A3 requires demographics"),
            Variant::A4 if self.demographics.is_none() || self.backstory.is_none() => {
                bad("A4 requires demographics and a backstory")
            }
            _ => Ok(()),
        }
    }

    /// Fills per-participant fields from a trial's sampled profile.
    pub fn for_trial(&self, trial: &TrialSpec) -> AgentSpec {
        let mut spec = self.clone();
        if matches!(self.variant, Variant::A3 | Variant::A4) && spec.demographics.is_none() {
            let get = |k: &str| trial.profile.get(k).cloned().unwrap_or_else(|| "unspecified".to_string());
            spec.demographics = Some(Demographics {
                age: get("age"),
                gender: get("gender"),
                education: get("education"),
                occupation: trial.profile.get("occupation").cloned(),
            });
        }
        if self.variant == Variant::A4 && spec.backstory.is_none() {
            spec.backstory = trial.backstory.clone();
        }
        spec
    }
}

pub fn system_prompt(agent: &AgentSpec) -> Result<Option<String>, HarnessError> {
    agent.check()?;
    Ok(match agent.variant {
        Variant::A1 => None,
        Variant::A2 => Some(ROLE_SENTENCE.to_string()),
        Variant::A3 => {
            let d = agent.demographics.as_ref().expect("checked");
            Some(format!(
                "{ROLE_SENTENCE}\n\nYOUR IDENTITY:\n- Age: {} years old\n- Gender: {}\n- Education: {}\n\n{DISCIPLINE}",
                d.age, d.gender, d.education
            ))
        }
        Variant::A4 => {
            let story = agent.backstory.as_deref().expect("checked");
            Some(format!(
                "{ROLE_SENTENCE}\n\nYOUR BACKGROUND AND MEMORIES:\n{story}\n\n\
                 Based on your background and memories above, respond as this participant would in the experiment.\n\
                 {DISCIPLINE}\n\
                 Your responses should reflect your background, experiences, and characteristics as described above."
            ))
        }
    })
}

fn schema_hint(schema: &ResponseSchema) -> String {
    match schema {
        ResponseSchema::Choice { options } => format!("answer with one of: {}", options.join(", ")),
        ResponseSchema::Scale { min, max } => format!("answer with a whole number from {min} to {max}"),
        ResponseSchema::Numeric { min: Some(lo), max: Some(hi) } => format!("answer with a number from {lo} to {hi}"),
        ResponseSchema::Numeric { .. } => "answer with a number".to_string(),
    }
}

pub fn user_prompt(trial: &TrialSpec) -> String {
    let mut out = String::new();
    if !trial.instructions.is_empty() {
        out.push_str(&trial.instructions);
        out.push_str("\n\n");
    }
    if let Some(fb) = trial.extra.get("feedback").and_then(|v| v.as_str()) {
        out.push_str(fb);
        out.push_str("\n\n");
    }
    if !trial.text.is_empty() {
        out.push_str(&trial.text);
        out.push_str("\n\n");
    }
    for item in &trial.items {
        let _ = writeln!(out, "{}. {} ({})", item.q_id, item.text, schema_hint(&item.schema));
    }
    out.push_str("\nReply with one line per question in the form Qk=<answer>, using the question labels above");
    let labels: Vec<&str> = trial.items.iter().map(|i| i.q_id.as_str()).collect();
    if !labels.is_empty() {
        let _ = write!(out, " ({})", labels.join(", "));
    }
    out.push('.');
    out
}

/// (system text or absent, user text).
pub fn render_prompt(trial: &TrialSpec, agent: &AgentSpec) -> Result<(Option<String>, String), HarnessError> {
    let spec = agent.for_trial(trial);
    Ok((system_prompt(&spec)?, user_prompt(trial)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    fn golden(name: &str) -> String {
        let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
        std::fs::read_to_string(p).unwrap()
    }

    fn with_demo(variant: Variant, age: &str, gender: &str, education: &str) -> AgentSpec {
        let mut a = AgentSpec::new(variant, "m", 1.0);
        a.demographics = Some(Demographics {
            age: age.into(),
            gender: gender.into(),
            education: education.into(),
            occupation: None,
        });
        a
    }

    #[test]
    fn a1_has_no_system_text() {
        assert_eq!(system_prompt(&AgentSpec::new(Variant::A1, "m", 1.0)).unwrap(), None);
    }

    #[test]
    fn a2_matches_golden() {
        let s = system_prompt(&AgentSpec::new(Variant::A2, "m", 1.0)).unwrap().unwrap();
        assert_eq!(s, golden("a2_system.txt"));
    }

    #[test]
    fn a3_matches_goldens() {
        let s = system_prompt(&with_demo(Variant::A3, "21", "Female", "college student")).unwrap().unwrap();
        assert_eq!(s, golden("a3_example.txt"));
        let s = system_prompt(&with_demo(Variant::A3, "{age}", "{gender}", "{education}")).unwrap().unwrap();
        assert_eq!(s, golden("a3_system_template.txt"));
    }

    #[test]
    fn a4_matches_goldens() {
        let mut a = with_demo(Variant::A4, "34", "Female", "nursing degree");
        a.backstory = Some("{generated_background}".into());
        assert_eq!(system_prompt(&a).unwrap().unwrap(), golden("a4_system_template.txt"));
        let example = golden("a4_example.txt");
        let story = example.lines().nth(3).unwrap();
        a.backstory = Some(story.into());
        assert_eq!(system_prompt(&a).unwrap().unwrap(), example);
    }

    #[test]
    fn variant_requirements() {
        assert!(system_prompt(&AgentSpec::new(Variant::A3, "m", 1.0)).is_err());
        let a = with_demo(Variant::A4, "1", "x", "y");
        assert!(system_prompt(&a).is_err());
        assert!(system_prompt(&AgentSpec::new(Variant::A2, "m", -0.1)).is_err());
    }
}
