use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pepr_core::config::RunConfig;
use pepr_core::eval::{build_report, write_report};
use pepr_core::nn::Task;
use pepr_core::parallel::default_workers;
use pepr_core::pipeline::{
    collect_results, eval_checkpoint, read_run_info, run_ablation, train_to_dir, write_eval, AblationAxis, RunInfo,
};
use pepr_core::synth::{generate_dataset, Domain, FsSource};
use pepr_core::train::{gradient_check, Composite, Method};
use pepr_core::verify::{run_suite, Suite};
use pepr_core::{Error, Result};

#[derive(Parser)]
#[command(name = "pepr", version, about = "Train RGB models with event latents as training-only targets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic paired RGB/event dataset.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one model and write its checkpoints and metric log.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        method: Method,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Row label used by `compare`; defaults to the method name.
        #[arg(long)]
        label: Option<String>,
    },
    /// Evaluate an inference checkpoint on RGB-only eval splits.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "day,dusk,night")]
        domains: Vec<Domain>,
        /// Defaults to the checkpoint's directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides for checkpoints without a run.json beside them.
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        label: Option<String>,
    },
    /// Aggregate eval results found under run directories into a report.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate a grid of pepr settings.
    Ablate {
        #[arg(long)]
        axis: AblationAxis,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Finite-difference gradient verification on miniature models.
    CheckGrads {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run oracle-equivalence suites.
    Verify {
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn required(flag: Option<PathBuf>, fallback: Option<&PathBuf>, what: &str) -> Result<PathBuf> {
    flag.or_else(|| fallback.cloned())
        .ok_or_else(|| Error::InvalidInput(format!("no {what}: pass --{what} or set it in the config")))
}

fn write_json<T: serde::Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    std::fs::write(&path, s).map_err(|e| Error::io(&path, e))
}

fn run(cli: Cli) -> Result<bool> {
    let workers = default_workers();
    match cli.command {
        Command::GenData { config, out } => {
            let cfg = load_config(config.as_deref())?;
            let out = required(out, cfg.data_dir.as_ref(), "out")?;
            let manifest = generate_dataset(&cfg.data, &out, workers)?;
            cfg.echo(&out)?;
            log::info!("wrote {} samples to {}", manifest.samples.len(), out.display());
        }
        Command::Train {
            config,
            method,
            seed,
            data,
            out,
            label,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            cfg.train.method = method;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            let data = required(data, cfg.data_dir.as_ref(), "data")?;
            let out = match out {
                Some(o) => o,
                None => required(None, cfg.out_dir.as_ref(), "out")?
                    .join(method.name())
                    .join(format!("seed{}", cfg.train.seed)),
            };
            let label = label.unwrap_or_else(|| method.name().to_string());
            let info = train_to_dir(&cfg, &data, &out, &label, &[], workers)?;
            log::info!(
                "trained {} for {} steps in {:.1}s, checkpoint sha256 {}",
                info.label,
                info.steps,
                info.wall_seconds,
                info.checksum
            );
        }
        Command::Eval {
            ckpt,
            data,
            domains,
            out,
            method,
            seed,
            label,
        } => {
            let dir = ckpt.parent().map(Path::to_path_buf).unwrap_or_default();
            let mut info = match read_run_info(&dir) {
                Ok(i) => i,
                Err(_) => {
                    let method = method.ok_or_else(|| {
                        Error::InvalidInput(format!("{} has no run.json beside it; pass --method", ckpt.display()))
                    })?;
                    RunInfo {
                        label: method.name().to_string(),
                        method,
                        task: Task::Segmentation,
                        seed: 0,
                        settings: vec![],
                        steps: 0,
                        final_loss_task: f64::NAN,
                        final_loss_feat: None,
                        checksum: String::new(),
                        wall_seconds: 0.0,
                    }
                }
            };
            if let Some(m) = method {
                info.method = m;
            }
            if let Some(s) = seed {
                info.seed = s;
            }
            if let Some(l) = label {
                info.label = l;
            }
            let result = eval_checkpoint(&ckpt, &data, &domains, &info, &FsSource, workers)?;
            let path = write_eval(&result, &out.unwrap_or(dir))?;
            let mut ok = true;
            for o in &result.domains {
                match o.result() {
                    Some(r) => log::info!("{}: {:.4} ({} samples)", r.domain, r.primary, r.samples),
                    None => {
                        ok = false;
                        if let pepr_core::eval::DomainOutcome::Failed { domain, error } = o {
                            eprintln!("{domain}: {error}");
                        }
                    }
                }
            }
            log::info!("wrote {}", path.display());
            if !ok {
                return Err(Error::InvalidInput("some requested domains could not be evaluated".into()));
            }
        }
        Command::Compare { runs, out } => {
            let results = collect_results(&runs)?;
            let report = build_report(&results)?;
            write_report(&report, &out)?;
            log::info!("report over {} runs written to {}", results.len(), out.display());
        }
        Command::Ablate {
            axis,
            config,
            data,
            out,
            seed,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            let out = required(out, cfg.out_dir.as_ref(), "out")?;
            let data = match data.or_else(|| cfg.data_dir.clone()) {
                Some(d) => d,
                None => {
                    let d = out.join("data");
                    generate_dataset(&cfg.data, &d, workers)?;
                    d
                }
            };
            cfg.echo(&out)?;
            let report = run_ablation(&cfg, axis, &data, &out, workers)?;
            log::info!("{} grid points written to {}", report.rows.len(), out.display());
        }
        Command::CheckGrads { config, out } => {
            let cfg = load_config(config.as_deref())?;
            let mut reports = Vec::new();
            let mut ok = true;
            for c in Composite::all() {
                let r = gradient_check(c, &cfg.gradcheck)?;
                for g in &r.groups {
                    eprintln!(
                        "{} {} {}: {} coords, max rel {:.2e}, rel pass {:.3}",
                        if g.passed { "PASS" } else { "FAIL" },
                        r.composite,
                        g.group,
                        g.checked,
                        g.max_rel_error,
                        g.rel_pass_fraction
                    );
                }
                ok &= r.passed();
                reports.push(r);
            }
            if let Some(dir) = out {
                write_json(&dir, "gradcheck.json", &reports)?;
            }
            return Ok(ok);
        }
        Command::Verify { suite, seed, out } => {
            let suites: Vec<Suite> = if suite == "all" {
                Suite::ALL.to_vec()
            } else {
                vec![suite.parse()?]
            };
            let mut ok = true;
            let mut reports = Vec::new();
            for s in suites {
                let r = run_suite(s, seed);
                for c in &r.checks {
                    eprintln!("{} {} / {}: {}", if c.passed { "PASS" } else { "FAIL" }, s, c.name, c.detail);
                }
                ok &= r.passed();
                reports.push(r);
            }
            if let Some(dir) = out {
                write_json(&dir, "verify.json", &reports)?;
            }
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
