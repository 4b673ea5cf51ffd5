//! End-to-end runs: quadratic certificates, data generation, training,
//! neural verification and compositional checks, with a JSON report.

pub mod config;
pub mod contour;
pub mod volume;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use config::{ConfigError, RunConfig, TargetLevel};

use crate::decomp::{compositional_quadratic_verifier, decompose, CompositionalLevel, DecompError};
use crate::learner::{train, write_log_csv, EpochLog, MlpNet};
use crate::local::{compositional_local_stability_verifier, local_stability_verifier, LocalError, LocalResult, LocalSettings};
use crate::neuralverify::{neural_verifier, NeuralError, NeuralResult, NeuralSettings};
use crate::prover::{Prover, ProverError, Settings, Status};
use crate::reach::{quadratic_reach_verifier, ReachError, ReachResult, ReachSettings};
use crate::system::DynamicalSystem;
use crate::zubovdata::{generate_data, Dataset};
use volume::{cached_doa, estimate_volume, Reference, VolumeEstimate};

pub const DATASET_FILE: &str = "dataset.csv";
pub const NET_FILE: &str = "net.txt";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const REPORT_FILE: &str = "report.json";
pub const CACHE_DIR: &str = "cache";

/// Samples used by the nesting check.
pub const NESTING_SAMPLES: usize = 100_000;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Prover(#[from] ProverError),
    #[error("{0}")]
    Missing(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `bytes` to a temporary sibling of `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ok,
    /// Reused from a previous run with the same configuration.
    Resumed,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    /// A counterexample or an undecided region blocked every level.
    Verification,
    /// The prover ran out of its box budget.
    Budget,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub kind: FailureKind,
    pub message: String,
    pub counterexample: Option<Status>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord<T> {
    pub status: StageStatus,
    pub result: Option<T>,
    pub failure: Option<StageFailure>,
    pub wall_time: f64,
}

impl<T> StageRecord<T> {
    fn ok(result: T, wall_time: f64) -> Self {
        StageRecord {
            status: StageStatus::Ok,
            result: Some(result),
            failure: None,
            wall_time,
        }
    }

    fn failed(failure: StageFailure, wall_time: f64) -> Self {
        StageRecord {
            status: StageStatus::Failed,
            result: None,
            failure: Some(failure),
            wall_time,
        }
    }

    pub fn succeeded(&self) -> bool {
        self.status != StageStatus::Failed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub n_samples: usize,
    pub labeled: usize,
    pub alpha: f64,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs: usize,
    pub final_epoch: Option<EpochLog>,
    pub file: String,
    pub log_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionalSummary {
    /// 1-based blocks.
    pub blocks: Vec<Vec<usize>>,
    pub local: Option<LocalResult>,
    pub quadratic: Option<CompositionalLevel>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageReports {
    pub local: Option<StageRecord<LocalResult>>,
    pub reach: Option<StageRecord<ReachResult>>,
    pub data: Option<StageRecord<DataSummary>>,
    pub train: Option<StageRecord<TrainSummary>>,
    pub neural_verify: Option<StageRecord<NeuralResult>>,
    pub compositional: Option<StageRecord<CompositionalSummary>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Levels {
    pub c1_p: Option<f64>,
    pub c2_p: Option<f64>,
    pub c1_v: Option<f64>,
    pub c2_v: Option<f64>,
    pub globally_stable: Option<bool>,
}

/// Sampled check of `P1 ⊆ P2`, `V1 ⊆ P2` and `V1 ⊆ V2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestingCheck {
    pub samples: usize,
    pub violations: usize,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeReport {
    pub n_mc: usize,
    pub seed: u64,
    pub converged: usize,
    pub undetermined: usize,
    pub quadratic: Option<[VolumeEstimate; 2]>,
    pub neural: Option<[VolumeEstimate; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub version: String,
    pub jobs: usize,
    pub prover: Settings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub config: RunConfig,
    pub environment: Environment,
    pub stages: StageReports,
    pub levels: Levels,
    /// Name of the stage that stopped the run, if any.
    pub halted_at: Option<String>,
    pub nesting: Option<NestingCheck>,
    pub volume: Option<VolumeReport>,
}

impl RunReport {
    /// The first failure in stage order.
    pub fn first_failure(&self) -> Option<&StageFailure> {
        let s = &self.stages;
        [
            s.local.as_ref().and_then(|r| r.failure.as_ref()),
            s.reach.as_ref().and_then(|r| r.failure.as_ref()),
            s.data.as_ref().and_then(|r| r.failure.as_ref()),
            s.train.as_ref().and_then(|r| r.failure.as_ref()),
            s.neural_verify.as_ref().and_then(|r| r.failure.as_ref()),
            s.compositional.as_ref().and_then(|r| r.failure.as_ref()),
        ]
        .into_iter()
        .flatten()
        .next()
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Missing(format!("{}: {e}", path.display())))
    }
}

/// Hash of the configuration fields that influence results.
pub fn config_hash(cfg: &RunConfig) -> String {
    let mut c = cfg.clone();
    c.jobs = None;
    c.output = None;
    let text = serde_json::to_string(&c).expect("config serializes");
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads for the prover; defaults to the config, then to the
    /// number of CPUs.
    pub jobs: Option<usize>,
    pub resume: bool,
    /// Output directory; defaults to the config, then `out/<system name>`.
    pub out: Option<PathBuf>,
}

pub fn output_dir(cfg: &RunConfig, opts: &RunOptions) -> PathBuf {
    opts.out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(&cfg.system.name))
}

fn prover_failure(e: &ProverError) -> StageFailure {
    StageFailure {
        kind: match e {
            ProverError::ResourceExhausted { .. } => FailureKind::Budget,
            _ => FailureKind::Other,
        },
        message: e.to_string(),
        counterexample: None,
    }
}

fn no_level(message: String, failure: Option<Status>) -> StageFailure {
    StageFailure {
        kind: FailureKind::Verification,
        message,
        counterexample: failure,
    }
}

fn other(message: impl ToString) -> StageFailure {
    StageFailure {
        kind: FailureKind::Other,
        message: message.to_string(),
        counterexample: None,
    }
}

fn local_failure(e: LocalError) -> StageFailure {
    match e {
        LocalError::NoLevel { failure } => no_level("no positive level verifies".into(), failure),
        LocalError::NotHurwitz => no_level(e.to_string(), None),
        LocalError::Prover(p) => prover_failure(&p),
        e => other(e),
    }
}

fn neural_failure(e: NeuralError) -> StageFailure {
    match e {
        NeuralError::NoLevel { failure } => no_level("no inner neural level verifies".into(), failure),
        NeuralError::Prover(p) => prover_failure(&p),
        NeuralError::NotHurwitz => no_level(e.to_string(), None),
        e => other(e),
    }
}

fn reach_failure(e: ReachError) -> StageFailure {
    match e {
        ReachError::NotHurwitz => no_level(e.to_string(), None),
        e => other(e),
    }
}

fn decomp_failure(e: DecompError) -> StageFailure {
    match e {
        DecompError::NotHurwitz { .. } => no_level(e.to_string(), None),
        e => other(e),
    }
}

/// Reuses a record from `prev` when resuming and the artifacts are present.
fn reuse<T: Clone>(prev: Option<&StageRecord<T>>, artifacts: &[PathBuf]) -> Option<StageRecord<T>> {
    let rec = prev?;
    if rec.succeeded() && rec.result.is_some() && artifacts.iter().all(|p| p.exists()) {
        let mut r = rec.clone();
        r.status = StageStatus::Resumed;
        Some(r)
    } else {
        None
    }
}

/// Runs every configured stage and writes the report to the output directory.
pub fn run(cfg: &RunConfig, opts: &RunOptions) -> Result<RunReport, PipelineError> {
    cfg.validate()?;
    let sys = cfg.system.build()?;
    let out = output_dir(cfg, opts);
    std::fs::create_dir_all(&out).map_err(io_err(&out))?;
    let jobs = opts
        .jobs
        .or(cfg.jobs)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let prover = Prover::with_jobs(jobs)?;
    let hash = config_hash(cfg);

    let previous = if opts.resume {
        RunReport::load(&out.join(REPORT_FILE))
            .ok()
            .filter(|r| r.config_hash == hash)
    } else {
        None
    };
    if opts.resume && previous.is_none() {
        log::info!("no matching previous report; running every stage");
    }
    let prev = previous.as_ref().map(|r| &r.stages);

    let mut report = RunReport {
        config_hash: hash,
        config: cfg.clone(),
        environment: Environment {
            version: env!("CARGO_PKG_VERSION").to_string(),
            jobs,
            prover: cfg.prover,
        },
        stages: StageReports::default(),
        levels: Levels::default(),
        halted_at: None,
        nesting: None,
        volume: None,
    };
    let st = &cfg.stages;
    let mut net: Option<MlpNet> = None;

    macro_rules! halt_if_failed {
        ($name:literal, $rec:expr) => {
            if !$rec.succeeded() {
                report.halted_at = Some($name.to_string());
                return finish(report, &out);
            }
        };
    }

    if let Some(ls) = &st.local {
        let rec = reuse(prev.and_then(|p| p.local.as_ref()), &[]).unwrap_or_else(|| {
            let t = Instant::now();
            let settings = LocalSettings {
                prover: cfg.prover,
                tol: ls.tol,
                try_global: ls.try_global,
            };
            match local_stability_verifier(&sys, &prover, &settings) {
                Ok(r) => StageRecord::ok(r, t.elapsed().as_secs_f64()),
                Err(e) => StageRecord::failed(local_failure(e), t.elapsed().as_secs_f64()),
            }
        });
        if let Some(r) = &rec.result {
            report.levels.c1_p = Some(r.level);
            report.levels.globally_stable = Some(r.globally_stable);
        }
        report.stages.local = Some(rec.clone());
        halt_if_failed!("local", rec);
    }

    if let Some(rs) = &st.reach {
        let c1 = report.levels.c1_p.expect("local stage ran");
        let rec = reuse(prev.and_then(|p| p.reach.as_ref()), &[]).unwrap_or_else(|| {
            let t = Instant::now();
            let settings = ReachSettings {
                prover: cfg.prover,
                tol: rs.tol,
                epsilon: rs.epsilon,
            };
            match quadratic_reach_verifier(&sys, c1, &prover, &settings) {
                Ok(r) => StageRecord::ok(r, t.elapsed().as_secs_f64()),
                Err(e) => StageRecord::failed(reach_failure(e), t.elapsed().as_secs_f64()),
            }
        });
        if let Some(r) = &rec.result {
            report.levels.c2_p = Some(r.level);
        }
        report.stages.reach = Some(rec.clone());
        halt_if_failed!("reach", rec);
    }

    let mut dataset: Option<Dataset> = None;
    let alpha = cfg.data_alpha();
    if let Some(ds) = &st.data {
        let path = out.join(DATASET_FILE);
        let resumed = reuse(prev.and_then(|p| p.data.as_ref()), std::slice::from_ref(&path)).and_then(|rec| {
            let text = std::fs::read_to_string(&path).ok()?;
            dataset = Some(Dataset::read_csv(&text, alpha, ds.seed).ok()?);
            Some(rec)
        });
        let rec = match resumed {
            Some(r) => r,
            None => {
                let t = Instant::now();
                let data = generate_data(&sys, ds.n_samples, alpha, ds.seed, ds.integration);
                let mut buf = Vec::new();
                data.write_csv(&mut buf).map_err(io_err(&path))?;
                write_atomic(&path, &buf).map_err(io_err(&path))?;
                let summary = DataSummary {
                    n_samples: ds.n_samples,
                    labeled: data.len(),
                    alpha,
                    file: DATASET_FILE.into(),
                };
                dataset = Some(data);
                StageRecord::ok(summary, t.elapsed().as_secs_f64())
            }
        };
        report.stages.data = Some(rec);
    }

    if let Some(tc) = &st.train {
        let (net_path, log_path) = (out.join(NET_FILE), out.join(TRAIN_LOG_FILE));
        let resumed = reuse(prev.and_then(|p| p.train.as_ref()), std::slice::from_ref(&net_path)).and_then(|rec| {
            let text = std::fs::read_to_string(&net_path).ok()?;
            net = Some(MlpNet::from_text(&text).ok()?.0);
            Some(rec)
        });
        let rec = match resumed {
            Some(r) => r,
            None => {
                let t = Instant::now();
                match train(&sys, dataset.as_ref(), tc) {
                    Ok(outcome) => {
                        write_atomic(&net_path, outcome.net.to_text(tc.alpha).as_bytes())
                            .map_err(io_err(&net_path))?;
                        let mut buf = Vec::new();
                        write_log_csv(&outcome.log, &mut buf).map_err(io_err(&log_path))?;
                        write_atomic(&log_path, &buf).map_err(io_err(&log_path))?;
                        net = Some(outcome.net);
                        StageRecord::ok(
                            TrainSummary {
                                epochs: tc.max_epoch,
                                final_epoch: outcome.log.last().copied(),
                                file: NET_FILE.into(),
                                log_file: TRAIN_LOG_FILE.into(),
                            },
                            t.elapsed().as_secs_f64(),
                        )
                    }
                    Err(e) => StageRecord::failed(other(e), t.elapsed().as_secs_f64()),
                }
            }
        };
        report.stages.train = Some(rec.clone());
        halt_if_failed!("train", rec);
    }

    if let Some(ns) = &st.neural_verify {
        let target = match ns.target {
            TargetLevel::C1P => report.levels.c1_p,
            TargetLevel::C2P => report.levels.c2_p,
        }
        .expect("validated stage order");
        let net = net.as_ref().expect("train stage ran");
        let rec = reuse(prev.and_then(|p| p.neural_verify.as_ref()), &[]).unwrap_or_else(|| {
            let t = Instant::now();
            let settings = NeuralSettings {
                prover: cfg.prover,
                tol: ns.tol,
                epsilon: ns.epsilon,
            };
            match neural_verifier(&sys, net, target, &prover, &settings) {
                Ok(r) => StageRecord::ok(r, t.elapsed().as_secs_f64()),
                Err(e) => StageRecord::failed(neural_failure(e), t.elapsed().as_secs_f64()),
            }
        });
        if let Some(r) = &rec.result {
            report.levels.c1_v = Some(r.c1);
            report.levels.c2_v = Some(r.c2);
        }
        report.stages.neural_verify = Some(rec.clone());
        halt_if_failed!("neural_verify", rec);
    }

    if let Some(cs) = &st.compositional {
        let rec = reuse(prev.and_then(|p| p.compositional.as_ref()), &[])
            .unwrap_or_else(|| run_compositional(&sys, cs, cfg.prover, &prover));
        report.stages.compositional = Some(rec.clone());
        halt_if_failed!("compositional", rec);
    }

    report.nesting = nesting_check(&sys, &report.levels, net.as_ref(), cfg.seed);
    if let Some(n) = &report.nesting {
        if !n.holds {
            log::error!("nesting check failed: {} violations", n.violations);
        }
    }

    if let Some(vc) = &cfg.volume {
        report.volume = Some(volume_report(&sys, &report.levels, net.as_ref(), vc, &out)?);
    }
    finish(report, &out)
}

fn finish(report: RunReport, out: &Path) -> Result<RunReport, PipelineError> {
    let path = out.join(REPORT_FILE);
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    write_atomic(&path, text.as_bytes()).map_err(io_err(&path))?;
    Ok(report)
}

fn run_compositional(
    sys: &DynamicalSystem,
    cs: &config::CompositionalStage,
    settings: Settings,
    prover: &Prover,
) -> StageRecord<CompositionalSummary> {
    let t = Instant::now();
    let d = match decompose(sys, &cs.zero_based()) {
        Ok(d) => d,
        Err(e) => return StageRecord::failed(decomp_failure(e), t.elapsed().as_secs_f64()),
    };
    let local_settings = LocalSettings {
        prover: settings,
        tol: cs.tol,
        try_global: false,
    };
    let mut summary = CompositionalSummary {
        blocks: cs.blocks.clone(),
        local: None,
        quadratic: None,
    };
    let local = match compositional_local_stability_verifier(sys, &d, prover, &local_settings) {
        Ok(r) => r,
        Err(e) => return StageRecord::failed(local_failure(e), t.elapsed().as_secs_f64()),
    };
    let c1 = local.level;
    if cs.local {
        summary.local = Some(local);
    }
    if cs.quadratic {
        let reach = ReachSettings {
            prover: settings,
            tol: cs.tol,
            ..Default::default()
        };
        match compositional_quadratic_verifier(sys, &d, &sys.domain, c1, prover, &reach) {
            Ok(r) => summary.quadratic = Some(r),
            Err(e) => return StageRecord::failed(decomp_failure(e), t.elapsed().as_secs_f64()),
        }
    }
    StageRecord::ok(summary, t.elapsed().as_secs_f64())
}

/// Samples the domain and counts points violating the inclusions between
/// the verified sets. `None` when fewer than two levels are known.
pub fn nesting_check(sys: &DynamicalSystem, levels: &Levels, net: Option<&MlpNet>, seed: u64) -> Option<NestingCheck> {
    let v = sys.quadratic_form()?;
    let mut violations = 0;
    let mut any = false;
    if let (Some(c1), Some(c2)) = (levels.c1_p, levels.c2_p) {
        any = true;
        violations += usize::from(c1 > c2);
    }
    if let (Some(c1), Some(c2)) = (levels.c1_v, levels.c2_v) {
        any = true;
        violations += usize::from(c1 > c2);
    }
    let target = levels.c2_p.or(levels.c1_p);
    if let (Some(net), Some(c1v), Some(cp)) = (net, levels.c1_v, target) {
        any = true;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6e65_7374);
        let pts = crate::zubovdata::sample_uniform(&sys.domain, NESTING_SAMPLES, rand::Rng::gen(&mut rng));
        for x in &pts {
            if net.forward(x) <= c1v && v.eval(x).map_or(true, |vx| vx > cp * (1.0 + 1e-12)) {
                violations += 1;
            }
        }
    }
    any.then_some(NestingCheck {
        samples: if net.is_some() { NESTING_SAMPLES } else { 0 },
        violations,
        holds: violations == 0,
    })
}

fn volume_report(
    sys: &DynamicalSystem,
    levels: &Levels,
    net: Option<&MlpNet>,
    vc: &config::VolumeConfig,
    out: &Path,
) -> Result<VolumeReport, PipelineError> {
    let reference = cached_doa(sys, vc.n_mc, vc.seed, Default::default(), &out.join(CACHE_DIR))
        .map_err(|e| PipelineError::Missing(e.to_string()))?;
    let both = |region: &(dyn Fn(&[f64]) -> bool + Sync)| -> Option<[VolumeEstimate; 2]> {
        Some([
            estimate_volume(&reference, region, Reference::SimulatedDoa).ok()?,
            estimate_volume(&reference, region, Reference::Domain).ok()?,
        ])
    };
    let quadratic = match (sys.quadratic_form(), levels.c2_p.or(levels.c1_p)) {
        (Some(v), Some(c)) => both(&|x: &[f64]| v.eval(x).is_ok_and(|vx| vx <= c)),
        _ => None,
    };
    let neural = match (net, levels.c2_v) {
        (Some(net), Some(c)) => both(&|x: &[f64]| net.forward(x) <= c),
        _ => None,
    };
    Ok(VolumeReport {
        n_mc: vc.n_mc,
        seed: vc.seed,
        converged: reference.converged_count(),
        undetermined: reference.count(crate::zubovdata::Classification::Undetermined),
        quadratic,
        neural,
    })
}

/// Contours of the verified level sets of a 2-d run, as CSV and SVG text.
pub fn render_plots(
    sys: &DynamicalSystem,
    levels: &Levels,
    net: Option<&MlpNet>,
    res: usize,
) -> Result<(String, String), contour::ContourError> {
    use contour::{contours, contours_csv, contours_svg, SvgLayer};
    let mut sets = Vec::new();
    let quad_levels: Vec<f64> = [levels.c1_p, levels.c2_p].into_iter().flatten().collect();
    if let (Some(v), false) = (sys.quadratic_form(), quad_levels.is_empty()) {
        let f = |x: &[f64]| v.eval(x).unwrap_or(f64::INFINITY);
        sets.push(("V_P".to_string(), contours(f, &sys.domain, &quad_levels, res)?));
    }
    let net_levels: Vec<f64> = [levels.c1_v, levels.c2_v].into_iter().flatten().collect();
    if let (Some(net), false) = (net, net_levels.is_empty()) {
        sets.push(("W_N".to_string(), contours(|x| net.forward(x), &sys.domain, &net_levels, res)?));
    }
    if sys.dim() != 2 {
        return Err(contour::ContourError::Dimension(sys.dim()));
    }
    let layers: Vec<SvgLayer> = sets
        .iter()
        .map(|(name, s)| SvgLayer {
            label: name,
            color: if name == "V_P" { "#d62728" } else { "#1f77b4" },
            dashed: name == "V_P",
            sets: s,
        })
        .collect();
    Ok((contours_csv(&sets), contours_svg(&sys.domain, &layers)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_config(dir: &Path) -> RunConfig {
        let mut cfg = RunConfig::from_json(
            r#"{"system": {"name": "lin", "f": ["-x1 + x2", "-x2"], "domain": [[-1, 1], [-1, 1]]},
                "stages": {"local": {}, "reach": {}}}"#,
        )
        .unwrap();
        cfg.output = Some(dir.to_path_buf());
        cfg
    }

    #[test]
    fn quadratic_run_writes_report() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = linear_config(dir.path());
        let r = run(&cfg, &RunOptions { jobs: Some(1), ..Default::default() }).unwrap();
        assert!(r.levels.c1_p.is_some() && r.levels.c2_p.is_some());
        assert_eq!(r.levels.globally_stable, Some(true));
        assert!(r.nesting.as_ref().unwrap().holds);
        let back = RunReport::load(&dir.path().join(REPORT_FILE)).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn resume_reuses_stages_with_same_hash() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = linear_config(dir.path());
        let first = run(&cfg, &RunOptions::default()).unwrap();
        let opts = RunOptions {
            resume: true,
            ..Default::default()
        };
        let second = run(&cfg, &opts).unwrap();
        assert_eq!(second.stages.local.as_ref().unwrap().status, StageStatus::Resumed);
        assert_eq!(second.levels, first.levels);

        let mut changed = cfg.clone();
        changed.prover.delta = 2e-4;
        let third = run(&changed, &opts).unwrap();
        assert_eq!(third.stages.local.unwrap().status, StageStatus::Ok);
    }

    #[test]
    fn hash_ignores_jobs_and_output() {
        let dir = tempfile::tempdir().unwrap();
        let a = linear_config(dir.path());
        let mut b = a.clone();
        b.jobs = Some(3);
        b.output = None;
        assert_eq!(config_hash(&a), config_hash(&b));
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
