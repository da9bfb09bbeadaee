//! `scores.json` documents and their markdown rendering.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::AgentScore;
use crate::evidence::PriorScales;
use crate::harness::ParseFailPolicy;
use crate::rng::RNG_ALGORITHM;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub rng: String,
    pub prior_scales: PriorScales,
    pub on_parse_fail: ParseFailPolicy,
    pub version: String,
}

impl Provenance {
    pub fn new(seed: u64, prior_scales: PriorScales, on_parse_fail: ParseFailPolicy) -> Self {
        Provenance { seed, rng: RNG_ALGORITHM.into(), prior_scales, on_parse_fail, version: env!("CARGO_PKG_VERSION").into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoresDocument {
    pub provenance: Provenance,
    pub agents: Vec<AgentScore>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {message}")]
    SchemaViolation { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ScoresDocument {
    pub fn to_canonical_json(&self) -> String {
        crate::canonical::to_canonical_string(self).expect("scores serialize")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ScoresDocument, ReportError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de).map_err(|e| ReportError::SchemaViolation {
            path: format!("{}:{}", path.display(), e.path()),
            message: e.inner().to_string(),
        })
    }

    /// Agents by benchmark PAS descending, ties by agent id.
    pub fn ranked(&self) -> Vec<&AgentScore> {
        let mut v: Vec<&AgentScore> = self.agents.iter().collect();
        v.sort_by(|a, b| {
            let key = |x: &AgentScore| if x.benchmark_pas.is_nan() { f64::NEG_INFINITY } else { x.benchmark_pas };
            key(b).total_cmp(&key(a)).then_with(|| a.agent_id.cmp(&b.agent_id))
        });
        v
    }
}

fn num(x: Option<f64>) -> String {
    match x {
        Some(v) if v.is_finite() => format!("{v:.3}"),
        _ => "n/a".into(),
    }
}

pub fn render_markdown(doc: &ScoresDocument) -> String {
    let ranked = doc.ranked();
    let domains: BTreeSet<&str> = doc.agents.iter().flat_map(|a| a.per_domain.keys().map(String::as_str)).collect();
    let p = &doc.provenance;
    let mut out = String::new();
    out.push_str("# Alignment leaderboard\n\n");
    let _ = writeln!(out, "- seed: {} ({})", p.seed, p.rng);
    let _ = writeln!(out, "- prior scales: t {}, anova {}", p.prior_scales.t, p.prior_scales.anova);
    let _ = writeln!(out, "- parse failures: {}", serde_json::to_value(p.on_parse_fail).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default());
    let _ = writeln!(out, "- version: {}\n", p.version);

    out.push_str("| Rank | Agent | PAS | ECS | rho | C_b |");
    for d in &domains {
        let _ = write!(out, " PAS {d} |");
    }
    out.push_str("\n|---:|---|---:|---:|---:|---:|");
    for _ in &domains {
        out.push_str("---:|");
    }
    out.push('\n');
    for (i, a) in ranked.iter().enumerate() {
        let g = a.ecs.as_ref().and_then(|e| e.global);
        let _ = write!(
            out,
            "| {} | {} | {} | {} | {} | {} |",
            i + 1,
            a.agent_id,
            num(Some(a.benchmark_pas)),
            num(g.map(|c| c.ecs)),
            num(g.map(|c| c.rho)),
            num(g.map(|c| c.c_b))
        );
        for d in &domains {
            let _ = write!(out, " {} |", num(a.per_domain.get(*d).copied()));
        }
        out.push('\n');
    }

    for a in &ranked {
        let _ = writeln!(out, "\n## {}\n", a.agent_id);
        out.push_str("| Study | Domain | PAS | Excluded |\n|---|---|---:|---:|\n");
        for s in &a.studies {
            let _ = writeln!(out, "| {} | {} | {} | {} |", s.study_id, s.domain, num(Some(s.value())), s.excluded);
        }
        let mut flags: Vec<String> = a.flags.clone();
        for s in &a.studies {
            for t in s.pas.tests() {
                for f in &t.flags {
                    flags.push(format!("{}/{}#{}: {f}", s.study_id, t.finding_id, t.index));
                }
            }
        }
        if !flags.is_empty() {
            out.push_str("\nFlags:\n\n");
            for f in flags {
                let _ = writeln!(out, "- {f}");
            }
        }
    }
    if !doc.flags.is_empty() {
        out.push_str("\n## Flags\n\n");
        for f in &doc.flags {
            let _ = writeln!(out, "- {f}");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::{score_study, AgentScore};
    use crate::evaluate::human_outcome;
    use crate::stats::TestOutcome;
    use crate::study::load_study_bundle;
    use std::path::Path;

    fn agent(id: &str, pas: f64) -> AgentScore {
        AgentScore {
            agent_id: id.into(),
            benchmark_pas: pas,
            per_domain: [("cognition".to_string(), pas)].into(),
            ecs: None,
            ecs_by_family: None,
            studies: Vec::new(),
            flags: Vec::new(),
        }
    }

    fn doc(agents: Vec<AgentScore>) -> ScoresDocument {
        ScoresDocument { provenance: Provenance::new(7, PriorScales::default(), ParseFailPolicy::Exclude), agents, flags: Vec::new() }
    }

    fn rows(md: &str) -> Vec<String> {
        md.lines().filter(|l| l.starts_with("| ") && l.chars().nth(2).is_some_and(|c| c.is_ascii_digit())).map(String::from).collect()
    }

    #[test]
    fn single_agent_one_row() {
        assert_eq!(rows(&render_markdown(&doc(vec![agent("solo", 0.6)]))).len(), 1);
    }

    #[test]
    fn ties_break_by_agent_id() {
        let md = render_markdown(&doc(vec![agent("zeta", 0.5), agent("alpha", 0.5), agent("mid", 0.7)]));
        let r = rows(&md);
        assert!(r[0].contains("| mid |") && r[1].contains("| alpha |") && r[2].contains("| zeta |"), "{md}");
    }

    #[test]
    fn golden_report() {
        let root = Path::new(env!("CARGO_MANIFEST_DIR"));
        let mut studies = Vec::new();
        for name in ["false_consensus", "framing", "side_effect"] {
            let b = load_study_bundle(root.join("fixtures").join(name)).unwrap();
            let h: Vec<TestOutcome> = b.tests().map(|(_, _, t)| human_outcome(t).unwrap().outcome).collect();
            studies.push(score_study(&b, &h, &PriorScales::default()).unwrap());
        }
        let d = doc(vec![AgentScore::from_studies("human-replica", studies), agent("baseline", 0.25)]);
        let md = render_markdown(&d);
        let golden_path = root.join("tests/golden/report.md");
        if std::env::var_os("ALIGNBENCH_BLESS").is_some() {
            std::fs::write(&golden_path, &md).unwrap();
        }
        let golden = std::fs::read_to_string(golden_path).unwrap();
        assert_eq!(md, golden);
        let back: ScoresDocument = serde_json::from_str(&d.to_canonical_json()).unwrap();
        assert_eq!(render_markdown(&back), md);
    }

    #[test]
    fn schema_violation_has_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scores.json");
        std::fs::write(&p, r#"{"provenance": {"seed": "x"}, "agents": []}"#).unwrap();
        match ScoresDocument::load(&p) {
            Err(ReportError::SchemaViolation { path, .. }) => assert!(path.ends_with("provenance.seed"), "{path}"),
            other => panic!("{other:?}"),
        }
    }
}
