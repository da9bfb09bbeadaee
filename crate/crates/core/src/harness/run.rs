//! Bounded-concurrency dispatch of trials to a backend.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use rand::Rng as _;

use super::backend::{AgentBackend, BackendError, ChatRequest};
use super::parse::parse_and_coerce;
use super::prompt::{render_prompt, AgentSpec};
use super::results::{ParseFailPolicy, ParseStatus, ParticipantRecord, ResponseRecord, RunMetadata, RunResults};
use super::trials::TrialSpec;
use super::HarnessError;
use crate::rng::RNG_ALGORITHM;

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub study_id: String,
    pub agent_id: Option<String>,
    pub seed: u64,
    pub max_parallel: usize,
    pub max_retries: u32,
    pub backoff_base: Duration,
    pub backoff_factor: f64,
    pub on_parse_fail: ParseFailPolicy,
    /// Append-only log; `None` disables logging.
    pub log_path: Option<PathBuf>,
}

impl RunOptions {
    pub fn new(study_id: impl Into<String>, seed: u64) -> Self {
        RunOptions {
            study_id: study_id.into(),
            agent_id: None,
            seed,
            max_parallel: 1,
            max_retries: 3,
            backoff_base: Duration::from_millis(500),
            backoff_factor: 2.0,
            on_parse_fail: ParseFailPolicy::Exclude,
            log_path: None,
        }
    }
}

struct Log(Option<Mutex<File>>);

impl Log {
    fn open(path: &Option<PathBuf>) -> Result<Self, HarnessError> {
        Ok(Log(match path {
            Some(p) => Some(Mutex::new(OpenOptions::new().create(true).append(true).open(p)?)),
            None => None,
        }))
    }

    fn line(&self, msg: &str) {
        if let Some(f) = &self.0 {
            let stamp = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true);
            let mut f = f.lock().expect("log lock");
            let _ = writeln!(f, "{stamp} {msg}");
        }
    }
}

/// Full-jitter delay before retry number `attempt` (0-based).
fn backoff(opts: &RunOptions, attempt: u32) -> Duration {
    let cap = opts.backoff_base.as_secs_f64() * opts.backoff_factor.powi(attempt as i32);
    if cap <= 0.0 {
        return Duration::ZERO;
    }
    Duration::from_secs_f64(rand::rng().random_range(0.0..=cap))
}

fn dispatch(backend: &dyn AgentBackend, req: &mut ChatRequest, opts: &RunOptions, log: &Log, retries: &mut u32) -> Result<super::ChatResponse, String> {
    loop {
        match backend.complete(req) {
            Ok(r) => return Ok(r),
            Err(BackendError::Transient(e)) if *retries < opts.max_retries => {
                log.line(&format!("{} transient failure (attempt {}): {e}", req.trial_key, req.attempt + 1));
                std::thread::sleep(backoff(opts, *retries));
                *retries += 1;
                req.attempt += 1;
            }
            Err(e) => {
                log.line(&format!("{} gave up: {e}", req.trial_key));
                return Err(e.to_string());
            }
        }
    }
}

fn run_trial(trial: &TrialSpec, seq: usize, agent: &AgentSpec, backend: &dyn AgentBackend, opts: &RunOptions, log: &Log) -> ResponseRecord {
    let (system, user) = render_prompt(trial, agent).expect("prompts validated before dispatch");
    let mut req = ChatRequest {
        system,
        user,
        model: agent.model_id.clone(),
        temperature: agent.temperature,
        trial_seq: seq as u64,
        trial_key: format!("{}/{}", trial.participant_id, trial.trial_index),
        items: trial.items.clone(),
        attempt: 0,
    };
    let mut retries = 0;
    let mut record = ResponseRecord {
        trial_info: trial.trial_info(),
        response_text: String::new(),
        parsed: BTreeMap::new(),
        status: ParseStatus::Failed,
        retries: 0,
        backend_id: None,
        error: None,
    };
    match dispatch(backend, &mut req, opts, log, &mut retries) {
        Ok(resp) => {
            let (mut parsed, mut status) = parse_and_coerce(&resp.text, &trial.items);
            let mut text = resp.text;
            let mut served = resp.backend_id;
            if status != ParseStatus::Ok && opts.on_parse_fail == ParseFailPolicy::RetryOnce {
                log.line(&format!("{} parse {:?}; re-dispatching once", req.trial_key, status));
                retries += 1;
                req.attempt += 1;
                if let Ok(again) = dispatch(backend, &mut req, opts, log, &mut retries) {
                    let (p2, s2) = parse_and_coerce(&again.text, &trial.items);
                    if p2.len() >= parsed.len() {
                        (parsed, status, text, served) = (p2, s2, again.text, again.backend_id);
                    }
                }
            }
            record.response_text = text;
            record.parsed = parsed;
            record.status = status;
            record.backend_id = Some(served);
        }
        Err(e) => record.error = Some(e),
    }
    record.retries = retries;
    record
}

/// Dispatches every trial and gathers the results ordered by
/// `(participant_id, trial_index)`.
pub fn execute_run(trials: &[TrialSpec], agent: &AgentSpec, backend: &dyn AgentBackend, opts: &RunOptions) -> Result<RunResults, HarnessError> {
    if opts.max_parallel == 0 {
        return Err(HarnessError::InvalidBackend("max_parallel must be at least 1".into()));
    }
    let mut ordered: Vec<&TrialSpec> = trials.iter().collect();
    ordered.sort_by(|a, b| (&a.participant_id, a.trial_index).cmp(&(&b.participant_id, b.trial_index)));
    for t in &ordered {
        render_prompt(t, agent)?;
    }

    let log = Log::open(&opts.log_path)?;
    let started_at = chrono::Utc::now().to_rfc3339();
    log.line(&format!("start study={} backend={} trials={} seed={}", opts.study_id, backend.id(), ordered.len(), opts.seed));

    let slots: Vec<Mutex<Option<ResponseRecord>>> = ordered.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..opts.max_parallel.min(ordered.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(trial) = ordered.get(i) else { break };
                let rec = run_trial(trial, i, agent, backend, opts, &log);
                *slots[i].lock().expect("slot lock") = Some(rec);
            });
        }
    });
    let records: Vec<ResponseRecord> =
        slots.into_iter().map(|m| m.into_inner().expect("slot lock").expect("every trial ran")).collect();

    let failed = records.iter().filter(|r| r.error.is_some()).count();
    if !records.is_empty() && failed == records.len() {
        log.line("every trial failed");
        return Err(HarnessError::BackendUnavailable(failed));
    }
    let total_retries: u64 = records.iter().map(|r| r.retries as u64).sum();

    let mut individual_data: Vec<ParticipantRecord> = Vec::new();
    for (trial, rec) in ordered.iter().zip(records) {
        match individual_data.last_mut() {
            Some(p) if p.participant_id == trial.participant_id => p.responses.push(rec),
            _ => individual_data.push(ParticipantRecord {
                participant_id: trial.participant_id.clone(),
                profile: trial.profile.clone(),
                responses: vec![rec],
            }),
        }
    }
    log.line(&format!("finish failed={failed} retries={total_retries}"));
    Ok(RunResults {
        study_id: opts.study_id.clone(),
        agent_id: opts.agent_id.clone().unwrap_or_else(|| format!("{}/{}", agent.model_id, agent.variant)),
        agent_spec: agent.clone(),
        individual_data,
        run_metadata: RunMetadata {
            seed: opts.seed,
            rng: RNG_ALGORITHM.to_string(),
            backend_id: backend.id(),
            started_at: Some(started_at),
            finished_at: Some(chrono::Utc::now().to_rfc3339()),
            total_retries,
            failed_trials: failed as u64,
            on_parse_fail: opts.on_parse_fail,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::backend::{MockEcho, MockScripted, Synthetic};
    use crate::harness::prompt::Variant;
    use crate::harness::trials::build_trials;
    use crate::study::load_study_bundle;
    use std::path::Path;

    fn trials(name: &str, n: u64) -> Vec<TrialSpec> {
        let b = load_study_bundle(Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)).unwrap();
        build_trials(&b, Some(n), 7).unwrap()
    }

    fn quick(study: &str) -> RunOptions {
        let mut o = RunOptions::new(study, 7);
        o.backoff_base = Duration::ZERO;
        o
    }

    #[test]
    fn echo_backend_parses_everything() {
        let t = trials("framing", 20);
        let agent = AgentSpec::new(Variant::A2, "mock", 1.0);
        let r = execute_run(&t, &agent, &MockEcho, &quick("framing")).unwrap();
        let all: Vec<&ResponseRecord> = r.individual_data.iter().flat_map(|p| &p.responses).collect();
        assert_eq!(all.len(), 20);
        assert!(all.iter().all(|x| x.status == ParseStatus::Ok && x.response_text.contains("Reply with one line")));
    }

    #[test]
    fn transient_failure_is_retried() {
        let t = trials("framing", 3);
        let agent = AgentSpec::new(Variant::A1, "mock", 1.0);
        let r = execute_run(&t, &agent, &MockScripted::new("Q1=A").failing_first(1), &quick("framing")).unwrap();
        for p in &r.individual_data {
            assert_eq!(p.responses[0].retries, 1);
            assert_eq!(p.responses[0].status, ParseStatus::Ok);
        }
        assert_eq!(r.run_metadata.total_retries, 3);
    }

    #[test]
    fn retries_are_bounded_and_all_failed_is_unavailable() {
        let t = trials("framing", 2);
        let agent = AgentSpec::new(Variant::A1, "mock", 1.0);
        let err = execute_run(&t, &agent, &MockScripted::new("Q1=A").failing_first(10), &quick("framing")).unwrap_err();
        assert!(matches!(err, HarnessError::BackendUnavailable(2)));
    }

    #[test]
    fn permanent_failure_recorded_as_failed() {
        let t = trials("framing", 2);
        let agent = AgentSpec::new(Variant::A1, "mock", 1.0);
        let mut backend = MockScripted::new("Q1=B");
        backend.permanent_failures.insert(format!("{}/0", t.iter().map(|x| &x.participant_id).min().unwrap()));
        let r = execute_run(&t, &agent, &backend, &quick("framing")).unwrap();
        assert_eq!(r.run_metadata.failed_trials, 1);
        assert_eq!(r.individual_data[0].responses[0].status, ParseStatus::Failed);
        assert_eq!(r.individual_data[0].responses[0].retries, 0);
    }

    #[test]
    fn retry_once_policy_redispatches() {
        let t = trials("framing", 1);
        let agent = AgentSpec::new(Variant::A1, "mock", 1.0);
        let mut opts = quick("framing");
        opts.on_parse_fail = ParseFailPolicy::RetryOnce;
        let r = execute_run(&t, &agent, &MockScripted::new("no idea"), &opts).unwrap();
        assert_eq!(r.individual_data[0].responses[0].retries, 1);
        assert_eq!(r.individual_data[0].responses[0].status, ParseStatus::Failed);
    }

    #[test]
    fn parallelism_does_not_change_body() {
        let t = trials("false_consensus", 200);
        let agent = AgentSpec::new(Variant::A3, "mock", 1.0);
        let backend = Synthetic { seed: 3 };
        let mut o1 = quick("false_consensus");
        let a = execute_run(&t, &agent, &backend, &o1).unwrap();
        o1.max_parallel = 32;
        let b = execute_run(&t, &agent, &backend, &o1).unwrap();
        assert_eq!(a.body_bytes(), b.body_bytes());
    }

    #[test]
    fn run_log_is_appended() {
        let dir = tempfile::tempdir().unwrap();
        let mut o = quick("framing");
        o.log_path = Some(dir.path().join("run.log"));
        let t = trials("framing", 2);
        let agent = AgentSpec::new(Variant::A1, "mock", 1.0);
        execute_run(&t, &agent, &MockEcho, &o).unwrap();
        execute_run(&t, &agent, &MockEcho, &o).unwrap();
        let text = std::fs::read_to_string(dir.path().join("run.log")).unwrap();
        assert_eq!(text.lines().filter(|l| l.contains(" start ")).count(), 2);
    }
}
