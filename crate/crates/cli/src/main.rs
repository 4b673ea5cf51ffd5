//! `roa`: region-of-attraction certification from the command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use roa_core::learner::MlpNet;
use roa_core::local::{local_stability_verifier, LocalSettings};
use roa_core::neuralverify::{neural_verifier, NeuralError, NeuralSettings};
use roa_core::pipeline::config::{SystemConfig, VolumeConfig};
use roa_core::pipeline::volume::{cached_doa, estimate_volume, Reference};
use roa_core::pipeline::{
    output_dir, render_plots, run, ConfigError, FailureKind, RunConfig, RunOptions, RunReport, CACHE_DIR, NET_FILE,
    REPORT_FILE,
};
use roa_core::prover::{Prover, ProverError, Settings};
use roa_core::reach::{quadratic_reach_verifier, ReachSettings};

const EXIT_FAILURE: u8 = 1;
const EXIT_VERIFICATION: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_BUDGET: u8 = 4;

#[derive(Parser)]
#[command(name = "roa", version, about = "Certify regions of attraction with quadratic and neural Lyapunov functions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone, Default)]
struct ProverArgs {
    /// Worker threads for the prover.
    #[arg(long)]
    jobs: Option<usize>,
    /// Premise slack.
    #[arg(long)]
    delta: Option<f64>,
    /// Smallest box width, relative to the widest domain side.
    #[arg(long)]
    min_width: Option<f64>,
    /// Maximum boxes per query.
    #[arg(long)]
    budget: Option<u64>,
}

impl ProverArgs {
    fn apply(&self, s: &mut Settings) {
        if let Some(d) = self.delta {
            s.delta = d;
        }
        if let Some(w) = self.min_width {
            s.min_width = w;
        }
        if let Some(b) = self.budget {
            s.budget = b;
        }
    }

    fn prover(&self) -> Result<Prover, Failure> {
        let jobs = self
            .jobs
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        Prover::with_jobs(jobs).map_err(Failure::from)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the stages of a configuration and write a report.
    Run {
        config: PathBuf,
        /// Reuse stages from a previous run with the same configuration.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        prover: ProverArgs,
    },
    /// Verify a saved network against a system.
    VerifyNet {
        /// Run configuration or bare system block.
        system: PathBuf,
        net: PathBuf,
        /// Quadratic level to reach: `c1_p`, `c2_p` or a number.
        #[arg(long)]
        target: String,
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        #[command(flatten)]
        prover: ProverArgs,
    },
    /// Monte Carlo volume of a sublevel region.
    Volume {
        config: PathBuf,
        /// `quadratic:<c>` or `neural:<c>`.
        #[arg(long)]
        region: String,
        /// Network file; defaults to the run output.
        #[arg(long)]
        net: Option<PathBuf>,
        #[arg(long)]
        n_mc: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export level-set contours of a finished 2-d run.
    Plot {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Grid nodes per side.
        #[arg(long, default_value_t = 400)]
        res: usize,
    },
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl ToString) -> Self {
        Failure {
            code,
            message: message.to_string(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::new(EXIT_CONFIG, e)
    }
}

impl From<ProverError> for Failure {
    fn from(e: ProverError) -> Self {
        match e {
            ProverError::ResourceExhausted { .. } => Failure::new(EXIT_BUDGET, e),
            e => Failure::new(EXIT_FAILURE, e),
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::new(EXIT_FAILURE, format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    roa_core::pipeline::write_atomic(path, text.as_bytes())
        .map_err(|e| Failure::new(EXIT_FAILURE, format!("{}: {e}", path.display())))
}

fn load_net(path: &Path) -> Result<MlpNet, Failure> {
    MlpNet::from_text(&read(path)?)
        .map(|(net, _)| net)
        .map_err(|e| Failure::new(EXIT_CONFIG, format!("{}: {e}", path.display())))
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn cmd_run(config: &Path, resume: bool, out: Option<PathBuf>, args: &ProverArgs) -> Result<(), Failure> {
    let mut cfg = RunConfig::from_path(config)?;
    args.apply(&mut cfg.prover);
    let opts = RunOptions {
        jobs: args.jobs,
        resume,
        out,
    };
    let report = run(&cfg, &opts).map_err(|e| match e {
        roa_core::pipeline::PipelineError::Config(c) => Failure::from(c),
        e => Failure::new(EXIT_FAILURE, e),
    })?;
    let l = &report.levels;
    let show = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6}"));
    println!(
        "c1_p {}  c2_p {}  c1_v {}  c2_v {}",
        show(l.c1_p),
        show(l.c2_p),
        show(l.c1_v),
        show(l.c2_v)
    );
    if let Some(g) = l.globally_stable {
        println!("globally stable: {g}");
    }
    if let Some(c) = report.stages.compositional.as_ref().and_then(|r| r.result.as_ref()) {
        println!(
            "compositional: local {}  quadratic {}",
            show(c.local.as_ref().map(|l| l.level)),
            show(c.quadratic.as_ref().map(|q| q.level))
        );
    }
    if let Some(v) = &report.volume {
        for (name, est) in [("quadratic", &v.quadratic), ("neural", &v.neural)] {
            if let Some([doa, dom]) = est {
                println!(
                    "{name} volume: {:.4} ± {:.4} of simulated DOA, {:.4} of domain",
                    doa.fraction, doa.half_width, dom.fraction
                );
            }
        }
    }
    println!("report: {}", output_dir(&cfg, &opts).join(REPORT_FILE).display());
    match (&report.halted_at, report.first_failure()) {
        (Some(stage), Some(f)) => {
            let code = match f.kind {
                FailureKind::Verification => EXIT_VERIFICATION,
                FailureKind::Budget => EXIT_BUDGET,
                FailureKind::Other => EXIT_FAILURE,
            };
            Err(Failure::new(code, format!("stage {stage} failed: {}", f.message)))
        }
        _ => match &report.nesting {
            Some(n) if !n.holds => Err(Failure::new(
                EXIT_VERIFICATION,
                format!("nesting check found {} violations", n.violations),
            )),
            _ => Ok(()),
        },
    }
}

/// Accepts a full run configuration or only its `system` block.
fn load_system(path: &Path) -> Result<(SystemConfig, Settings), Failure> {
    let text = read(path)?;
    match RunConfig::from_json(&text) {
        Ok(cfg) => Ok((cfg.system, cfg.prover)),
        Err(full) => {
            let sys: SystemConfig = serde_json::from_str(&text).map_err(|_| Failure::from(full))?;
            Ok((sys, Settings::default()))
        }
    }
}

fn cmd_verify_net(system: &Path, net: &Path, target: &str, tol: f64, args: &ProverArgs) -> Result<(), Failure> {
    let (sys_cfg, mut settings) = load_system(system)?;
    args.apply(&mut settings);
    let sys = sys_cfg.build()?;
    let net = load_net(net)?;
    let prover = args.prover()?;
    let c_target = match target {
        "c1_p" | "c2_p" => {
            let local = local_stability_verifier(
                &sys,
                &prover,
                &LocalSettings {
                    prover: settings,
                    ..Default::default()
                },
            )
            .map_err(|e| Failure::new(EXIT_VERIFICATION, e))?;
            if target == "c1_p" {
                local.level
            } else {
                let reach = ReachSettings {
                    prover: settings,
                    ..Default::default()
                };
                quadratic_reach_verifier(&sys, local.level, &prover, &reach)
                    .map_err(|e| Failure::new(EXIT_VERIFICATION, e))?
                    .level
            }
        }
        s => s
            .parse::<f64>()
            .ok()
            .filter(|c| *c > 0.0)
            .ok_or_else(|| Failure::new(EXIT_CONFIG, format!("--target: expected c1_p, c2_p or a positive number, got {s}")))?,
    };
    let ns = NeuralSettings {
        prover: settings,
        tol,
        ..Default::default()
    };
    match neural_verifier(&sys, &net, c_target, &prover, &ns) {
        Ok(r) => {
            print_json(&r);
            Ok(())
        }
        Err(NeuralError::Prover(p)) => Err(p.into()),
        Err(e @ (NeuralError::NoLevel { .. } | NeuralError::NotHurwitz)) => Err(Failure::new(EXIT_VERIFICATION, e)),
        Err(e) => Err(Failure::new(EXIT_CONFIG, e)),
    }
}

fn cmd_volume(
    config: &Path,
    region: &str,
    net: Option<PathBuf>,
    n_mc: Option<usize>,
    out: Option<PathBuf>,
) -> Result<(), Failure> {
    let cfg = RunConfig::from_path(config)?;
    let sys = cfg.system.build()?;
    let dir = output_dir(&cfg, &RunOptions { out, ..Default::default() });
    let vc = cfg.volume.unwrap_or(VolumeConfig {
        seed: cfg.seed,
        ..Default::default()
    });
    let n_mc = n_mc.unwrap_or(vc.n_mc);
    let bad = || Failure::new(EXIT_CONFIG, format!("--region: expected quadratic:<c> or neural:<c>, got {region}"));
    let (kind, level) = region.split_once(':').ok_or_else(bad)?;
    let c: f64 = level.parse().map_err(|_| bad())?;
    let reference = cached_doa(&sys, n_mc, vc.seed, Default::default(), &dir.join(CACHE_DIR))
        .map_err(|e| Failure::new(EXIT_FAILURE, e))?;
    let member: Box<dyn Fn(&[f64]) -> bool + Sync> = match kind {
        "quadratic" => {
            let v = sys
                .quadratic_form()
                .ok_or_else(|| Failure::new(EXIT_VERIFICATION, "linearization is not Hurwitz"))?;
            Box::new(move |x: &[f64]| v.eval(x).is_ok_and(|vx| vx <= c))
        }
        "neural" => {
            let net = load_net(&net.unwrap_or_else(|| dir.join(NET_FILE)))?;
            Box::new(move |x: &[f64]| net.forward(x) <= c)
        }
        _ => return Err(bad()),
    };
    let estimates = [Reference::SimulatedDoa, Reference::Domain]
        .map(|r| estimate_volume(&reference, &member, r).map_err(|e| Failure::new(EXIT_FAILURE, e)));
    let [doa, dom] = estimates;
    print_json(&[doa?, dom?]);
    Ok(())
}

fn cmd_plot(config: &Path, out: Option<PathBuf>, res: usize) -> Result<(), Failure> {
    let cfg = RunConfig::from_path(config)?;
    let sys = cfg.system.build()?;
    let dir = output_dir(&cfg, &RunOptions { out, ..Default::default() });
    let report = RunReport::load(&dir.join(REPORT_FILE)).map_err(|e| Failure::new(EXIT_FAILURE, e))?;
    let net_path = dir.join(NET_FILE);
    let net = if net_path.exists() { Some(load_net(&net_path)?) } else { None };
    let (csv, svg) = render_plots(&sys, &report.levels, net.as_ref(), res).map_err(|e| Failure::new(EXIT_CONFIG, e))?;
    let (csv_path, svg_path) = (dir.join("contours.csv"), dir.join("contours.svg"));
    write(&csv_path, &csv)?;
    write(&svg_path, &svg)?;
    println!("{}\n{}", csv_path.display(), svg_path.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            resume,
            out,
            prover,
        } => cmd_run(&config, resume, out, &prover),
        Command::VerifyNet {
            system,
            net,
            target,
            tol,
            prover,
        } => cmd_verify_net(&system, &net, &target, tol, &prover),
        Command::Volume {
            config,
            region,
            net,
            n_mc,
            out,
        } => cmd_volume(&config, &region, net, n_mc, out),
        Command::Plot { config, out, res } => cmd_plot(&config, out, res),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
