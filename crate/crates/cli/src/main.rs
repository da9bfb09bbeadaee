//! `alignbench`: run agents against study bundles, score them, and report.
//!
//! Exit codes: 0 success, 1 scoring or run failure, 2 usage error.

mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use alignbench_core::alignment::{score_run, AgentScore, StudyScore};
use alignbench_core::canonical::to_canonical_string;
use alignbench_core::effects::cohens_d_from_test;
use alignbench_core::evaluate::human_outcome;
use alignbench_core::evidence::PriorScales;
use alignbench_core::harness::backend::{HttpChat, HttpChatConfig, MockEcho, Mixture, Synthetic};
use alignbench_core::harness::trials::attach_backstories;
use alignbench_core::harness::{build_trials, execute_run, AgentBackend, AgentSpec, ParseFailPolicy, RunOptions, RunResults, Variant};
use alignbench_core::report::{render_markdown, Provenance, ScoresDocument};
use alignbench_core::stats::TestFamily;
use alignbench_core::study::{load_benchmark, load_study_bundle, read_study_bundle, validate_bundle, StudyBundle};
use alignbench_core::synth::{synth_generate, SynthDesign, TrueEffect};
use alignbench_core::uncertainty::{
    bootstrap_pas, noise_ceiling, sensitivity_sweep, stouffer_global, stouffer_inputs, BootstrapReport, DEFAULT_BOOTSTRAP_B,
};
use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use config::Config;

const DEFAULT_SEED: u64 = 0;
const DEFAULT_SCALES: [f64; 6] = [0.5, 0.6, 0.707, 0.8, 0.9, 1.0];

#[derive(Debug, Parser)]
#[command(name = "alignbench", version, about = "Behavioral alignment scoring for simulated study participants")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML or JSON file supplying defaults for any flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cauchy prior scale for t-family tests.
    #[arg(long, global = true)]
    prior_scale_t: Option<f64>,
    /// Prior scale for ANOVA tests.
    #[arg(long, global = true)]
    prior_scale_anova: Option<f64>,
    /// exclude | retry-once | impute-midpoint
    #[arg(long, global = true)]
    on_parse_fail: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check bundle directories against the schema and cross-file invariants.
    Validate {
        /// Bundle directories; with --bundles, every bundle under that root.
        paths: Vec<PathBuf>,
        #[arg(long)]
        bundles: Option<PathBuf>,
    },
    /// Collect agent responses for one study.
    Run(RunArgs),
    /// Score results files into scores.json.
    Score {
        results: Vec<PathBuf>,
        #[arg(long)]
        bundles: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Participant-level bootstrap SE of study and benchmark PAS.
    Bootstrap {
        results: Vec<PathBuf>,
        #[arg(long)]
        bundles: Option<PathBuf>,
        #[arg(long = "B", alias = "replicates")]
        b: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-score a scores.json across prior scales and compare rankings.
    Sensitivity {
        scores: PathBuf,
        #[arg(long, value_delimiter = ',')]
        scales: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Hierarchical Stouffer test of agent-human effect differences.
    Stouffer {
        scores: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Expected ECS between two human replications.
    Ceiling {
        /// JSON list of {"d": .., "n": ..} objects.
        #[arg(long, conflicts_with = "bundles")]
        effects: Option<PathBuf>,
        /// Use the first test of every finding under this root.
        #[arg(long)]
        bundles: Option<PathBuf>,
        #[arg(long = "B", alias = "replicates")]
        b: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate synthetic participant responses with a known effect.
    Synth(SynthArgs),
    /// Render a scores.json.
    Report {
        scores: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Markdown)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Bundle directory.
    #[arg(long)]
    study: PathBuf,
    #[arg(long)]
    variant: Option<String>,
    /// http | mock_echo | synthetic | mixture
    #[arg(long)]
    backend: Option<String>,
    /// Mixture members, comma separated.
    #[arg(long, value_delimiter = ',')]
    members: Option<Vec<String>>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    temperature: Option<f64>,
    /// Participants; defaults to the bundle's declared n.
    #[arg(long)]
    n: Option<u64>,
    #[arg(long)]
    max_parallel: Option<usize>,
    #[arg(long)]
    max_retries: Option<u32>,
    /// JSON list of backstory strings, used by A4.
    #[arg(long)]
    backstories: Option<PathBuf>,
    /// Output directory for results.json and run.log.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    family: TestFamily,
    #[arg(long, allow_hyphen_values = true)]
    d: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    r: Option<f64>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    p0: Option<f64>,
    /// P(first category) per group, comma separated.
    #[arg(long, value_delimiter = ',')]
    cells: Option<Vec<f64>>,
    #[arg(long)]
    n: Option<u64>,
    #[arg(long)]
    noise_sd: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Markdown,
}

#[derive(Debug)]
enum Failure {
    Usage(anyhow::Error),
    Run(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Run(e)
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(anyhow!(msg.into()))
}

/// Flags merged over the config file.
struct Settings {
    config: Config,
    seed: u64,
    scales: PriorScales,
    policy: ParseFailPolicy,
}

impl Settings {
    fn new(g: &GlobalArgs) -> Result<Settings, Failure> {
        let config = match &g.config {
            Some(p) => Config::load(p).map_err(Failure::Usage)?,
            None => Config::default(),
        };
        let d = PriorScales::default();
        let scales = PriorScales {
            t: g.prior_scale_t.or(config.prior_scale_t).unwrap_or(d.t),
            anova: g.prior_scale_anova.or(config.prior_scale_anova).unwrap_or(d.anova),
        };
        if !(scales.t > 0.0 && scales.anova > 0.0) {
            return Err(usage("prior scales must be positive"));
        }
        let policy = match g.on_parse_fail.as_ref().or(config.on_parse_fail.as_ref()) {
            Some(s) => s.parse().map_err(usage)?,
            None => ParseFailPolicy::default(),
        };
        Ok(Settings { seed: g.seed.or(config.seed).unwrap_or(DEFAULT_SEED), scales, policy, config })
    }

    fn bundles(&self, flag: &Option<PathBuf>) -> Result<PathBuf, Failure> {
        flag.clone().or(self.config.bundles.clone()).ok_or_else(|| usage("--bundles is required"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = Settings::new(&cli.global).and_then(|s| dispatch(cli.command, &s));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(command: Command, s: &Settings) -> Result<(), Failure> {
    match command {
        Command::Validate { paths, bundles } => cmd_validate(paths, bundles.or(s.config.bundles.clone()), s),
        Command::Run(args) => cmd_run(args, s),
        Command::Score { results, bundles, out } => cmd_score(&results, &s.bundles(&bundles)?, out.as_deref(), s),
        Command::Bootstrap { results, bundles, b, out } => cmd_bootstrap(&results, &s.bundles(&bundles)?, b, out.as_deref(), s),
        Command::Sensitivity { scores, scales, out } => cmd_sensitivity(&scores, scales, out.as_deref(), s),
        Command::Stouffer { scores, out } => cmd_stouffer(&scores, out.as_deref(), s),
        Command::Ceiling { effects, bundles, b, out } => cmd_ceiling(effects, bundles, b, out.as_deref(), s),
        Command::Synth(args) => cmd_synth(args, s),
        Command::Report { scores, format, out } => cmd_report(&scores, format, out.as_deref()),
    }
}

fn emit(text: &str, out: Option<&Path>) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Canonical JSON of `value` with the seed added at the top level.
fn with_seed<T: Serialize>(value: &T, seed: u64) -> anyhow::Result<String> {
    let mut v = serde_json::to_value(value)?;
    match &mut v {
        Value::Object(m) => {
            m.insert("seed".into(), json!(seed));
        }
        other => v = json!({ "seed": seed, "value": other.take() }),
    }
    Ok(to_canonical_string(&v)?)
}

fn cmd_validate(paths: Vec<PathBuf>, root: Option<PathBuf>, s: &Settings) -> Result<(), Failure> {
    let mut dirs = paths;
    if let Some(root) = root {
        let mut found: Vec<PathBuf> = std::fs::read_dir(&root)
            .with_context(|| format!("reading {}", root.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("metadata.json").is_file())
            .collect();
        found.sort();
        dirs.extend(found);
    }
    if dirs.is_empty() {
        return Err(usage("no bundle directories given"));
    }
    let mut reports = BTreeMap::new();
    let mut ok = true;
    for dir in &dirs {
        let entry = match read_study_bundle(dir) {
            Ok(b) => {
                let r = validate_bundle(&b);
                ok &= r.is_ok();
                serde_json::to_value(&r).context("serializing validation report")?
            }
            Err(e) => {
                ok = false;
                json!({ "error": e.to_string() })
            }
        };
        reports.insert(dir.display().to_string(), entry);
    }
    emit(&with_seed(&json!({ "ok": ok, "bundles": reports }), s.seed)?, None)?;
    if ok {
        Ok(())
    } else {
        Err(Failure::Run(anyhow!("validation failed")))
    }
}

fn build_backend(kind: &str, members: &[String], seed: u64) -> Result<Arc<dyn AgentBackend>, Failure> {
    Ok(match kind {
        "http" | "http_chat" => Arc::new(HttpChat::new(HttpChatConfig::from_env()).map_err(|e| usage(e.to_string()))?),
        "mock_echo" => Arc::new(MockEcho),
        "synthetic" => Arc::new(Synthetic { seed }),
        "mixture" => {
            let names: Vec<String> = if members.is_empty() {
                vec!["synthetic".into(), "mock_echo".into()]
            } else {
                members.to_vec()
            };
            if names.iter().any(|m| m == "mixture") {
                return Err(usage("mixture members cannot be mixtures"));
            }
            let built = names.iter().map(|m| build_backend(m, &[], seed)).collect::<Result<Vec<_>, _>>()?;
            Arc::new(Mixture::new(built, seed).map_err(|e| usage(e.to_string()))?)
        }
        other => return Err(usage(format!("unknown backend `{other}`"))),
    })
}

fn cmd_run(a: RunArgs, s: &Settings) -> Result<(), Failure> {
    let c = &s.config;
    let bundle = load_study_bundle(&a.study).with_context(|| format!("loading {}", a.study.display()))?;
    let variant: Variant = a.variant.or(c.variant.clone()).unwrap_or_else(|| "A1".into()).parse().map_err(usage)?;
    let backend_kind = a.backend.or(c.backend.clone()).unwrap_or_else(|| "mock_echo".into());
    let members = a.members.or(c.members.clone()).unwrap_or_default();
    let backend = build_backend(&backend_kind, &members, s.seed)?;
    let model = a.model.or(c.model.clone()).unwrap_or_else(|| backend_kind.clone());
    let temperature = a.temperature.or(c.temperature).unwrap_or(1.0);
    let spec = AgentSpec::new(variant, model, temperature);

    let mut trials = build_trials(&bundle, a.n.or(c.n), s.seed).map_err(|e| Failure::Run(e.into()))?;
    if let Some(p) = &a.backstories {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let stories: Vec<String> = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?;
        attach_backstories(&mut trials, &stories);
    }
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut opts = RunOptions::new(bundle.study_id.clone(), s.seed);
    opts.max_parallel = a.max_parallel.or(c.max_parallel).unwrap_or(1);
    if let Some(r) = a.max_retries.or(c.max_retries) {
        opts.max_retries = r;
    }
    opts.on_parse_fail = s.policy;
    opts.log_path = Some(a.out.join("run.log"));
    let results = execute_run(&trials, &spec, backend.as_ref(), &opts).map_err(|e| Failure::Run(e.into()))?;
    let path = a.out.join("results.json");
    std::fs::write(&path, results.to_canonical_json()).with_context(|| format!("writing {}", path.display()))?;
    eprintln!(
        "{}: {} participants, {} failed trials, seed {}",
        path.display(),
        results.individual_data.len(),
        results.run_metadata.failed_trials,
        s.seed
    );
    Ok(())
}

fn load_results(paths: &[PathBuf]) -> Result<Vec<RunResults>, Failure> {
    if paths.is_empty() {
        return Err(usage("no results files given"));
    }
    let mut loaded = Vec::new();
    let mut errors = Vec::new();
    for p in paths {
        let parsed = std::fs::read_to_string(p)
            .map_err(anyhow::Error::from)
            .and_then(|t| serde_json::from_str::<RunResults>(&t).map_err(anyhow::Error::from));
        match parsed {
            Ok(r) => loaded.push(r),
            Err(e) => errors.push(format!("{}: {e}", p.display())),
        }
    }
    if errors.is_empty() {
        Ok(loaded)
    } else {
        Err(Failure::Run(anyhow!("could not load results:\n  {}", errors.join("\n  "))))
    }
}

fn bundles_by_id(root: &Path) -> Result<BTreeMap<String, StudyBundle>, Failure> {
    let bundles = load_benchmark(root).with_context(|| format!("loading bundles under {}", root.display()))?;
    Ok(bundles.into_iter().map(|b| (b.study_id.clone(), b)).collect())
}

fn cmd_score(paths: &[PathBuf], root: &Path, out: Option<&Path>, s: &Settings) -> Result<(), Failure> {
    let results = load_results(paths)?;
    let bundles = bundles_by_id(root)?;
    let mut per_agent: BTreeMap<String, Vec<StudyScore>> = BTreeMap::new();
    let mut errors = Vec::new();
    for r in &results {
        let scored = bundles
            .get(&r.study_id)
            .ok_or_else(|| anyhow!("no bundle for study `{}`", r.study_id))
            .and_then(|b| Ok(score_run(b, r, &s.scales, s.policy)?));
        match scored {
            Ok(st) => per_agent.entry(r.agent_id.clone()).or_default().push(st),
            Err(e) => errors.push(format!("{} / {}: {e}", r.agent_id, r.study_id)),
        }
    }
    let agents: Vec<AgentScore> = per_agent.into_iter().map(|(id, st)| AgentScore::from_studies(id, st)).collect();
    let doc = ScoresDocument {
        provenance: Provenance::new(s.seed, s.scales, s.policy),
        agents,
        flags: errors.iter().map(|e| format!("unscorable: {e}")).collect(),
    };
    emit(&doc.to_canonical_json(), out)?;
    if errors.is_empty() {
        Ok(())
    } else {
        Err(Failure::Run(anyhow!("{} study run(s) could not be scored:\n  {}", errors.len(), errors.join("\n  "))))
    }
}

fn cmd_bootstrap(paths: &[PathBuf], root: &Path, b: Option<usize>, out: Option<&Path>, s: &Settings) -> Result<(), Failure> {
    let b = b.or(s.config.replicates).unwrap_or(DEFAULT_BOOTSTRAP_B);
    let results = load_results(paths)?;
    let bundles = bundles_by_id(root)?;
    let mut per_agent: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for r in &results {
        let bundle = bundles.get(&r.study_id).ok_or_else(|| anyhow!("no bundle for study `{}`", r.study_id))?;
        let boot = bootstrap_pas(bundle, r, b, s.seed, &s.scales, s.policy)
            .with_context(|| format!("{} / {}", r.agent_id, r.study_id))?;
        per_agent.entry(r.agent_id.clone()).or_default().insert(boot.study_id, boot.se);
    }
    let reports: Vec<BootstrapReport> =
        per_agent.into_iter().map(|(id, se)| BootstrapReport::new(id, se, b, s.seed)).collect();
    emit(&with_seed(&json!({ "agents": reports }), s.seed)?, out)?;
    Ok(())
}

fn load_scores(path: &Path) -> Result<ScoresDocument, Failure> {
    ScoresDocument::load(path).map_err(|e| Failure::Run(e.into()))
}

fn cmd_sensitivity(path: &Path, scales: Option<Vec<f64>>, out: Option<&Path>, s: &Settings) -> Result<(), Failure> {
    let doc = load_scores(path)?;
    let scales = scales.or(s.config.scales.clone()).unwrap_or_else(|| DEFAULT_SCALES.to_vec());
    if scales.is_empty() {
        return Err(usage("--scales is empty"));
    }
    let report = sensitivity_sweep(&doc.agents, &doc.provenance.prior_scales, &scales).context("sensitivity sweep")?;
    emit(&with_seed(&report, s.seed)?, out)?;
    Ok(())
}

fn cmd_stouffer(path: &Path, out: Option<&Path>, s: &Settings) -> Result<(), Failure> {
    let doc = load_scores(path)?;
    let mut reports = BTreeMap::new();
    for a in &doc.agents {
        let r = stouffer_global(&stouffer_inputs(a)).with_context(|| format!("agent {}", a.agent_id))?;
        reports.insert(a.agent_id.clone(), r);
    }
    emit(&with_seed(&json!({ "agents": reports }), s.seed)?, out)?;
    Ok(())
}

#[derive(serde::Deserialize)]
struct EffectEntry {
    d: f64,
    n: u64,
}

fn bundle_effects(root: &Path) -> Result<Vec<(f64, u64)>, Failure> {
    let bundles = load_benchmark(root).with_context(|| format!("loading bundles under {}", root.display()))?;
    let mut pairs = Vec::new();
    for b in &bundles {
        for f in &b.findings {
            let Some(test) = f.tests.first() else { continue };
            let Ok(h) = human_outcome(test) else { continue };
            if let Ok(e) = cohens_d_from_test(&h.outcome) {
                pairs.push((e.d.abs(), h.outcome.total_n().max(test.human_n)));
            }
        }
    }
    Ok(pairs)
}

fn cmd_ceiling(effects: Option<PathBuf>, bundles: Option<PathBuf>, b: Option<usize>, out: Option<&Path>, s: &Settings) -> Result<(), Failure> {
    let pairs = match (effects, bundles.or(s.config.bundles.clone())) {
        (Some(p), _) => {
            let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
            let entries: Vec<EffectEntry> = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            entries.into_iter().map(|e| (e.d, e.n)).collect()
        }
        (None, Some(root)) => bundle_effects(&root)?,
        (None, None) => return Err(usage("one of --effects or --bundles is required")),
    };
    let b = b.or(s.config.replicates).unwrap_or(1000);
    let report = noise_ceiling(&pairs, b, s.seed).context("noise ceiling")?;
    emit(&with_seed(&report, s.seed)?, out)?;
    Ok(())
}

fn cmd_synth(a: SynthArgs, s: &Settings) -> Result<(), Failure> {
    let effect = match (a.d, a.r, a.p, a.cells) {
        (Some(d), None, None, None) => TrueEffect::D { d },
        (None, Some(r), None, None) => TrueEffect::R { r },
        (None, None, Some(p), None) => TrueEffect::Proportion { p, p0: a.p0.unwrap_or(0.5) },
        (None, None, None, Some(p)) => TrueEffect::Cells { p },
        (None, None, None, None) => return Err(usage("one of --d, --r, --p or --cells is required")),
        _ => return Err(usage("--d, --r, --p and --cells are mutually exclusive")),
    };
    let n = a.n.or(s.config.n).ok_or_else(|| usage("--n is required"))?;
    let mut design = SynthDesign::new(a.family, effect, n, s.seed);
    if let Some(sd) = a.noise_sd {
        design.noise_sd = sd;
    }
    let results = synth_generate(&design).map_err(|e| usage(e.to_string()))?;
    emit(&results.to_canonical_json(), a.out.as_deref())?;
    Ok(())
}

fn cmd_report(path: &Path, format: Format, out: Option<&Path>) -> Result<(), Failure> {
    let doc = load_scores(path)?;
    let text = match format {
        Format::Json => doc.to_canonical_json(),
        Format::Markdown => render_markdown(&doc),
    };
    emit(&text, out)?;
    Ok(())
}
