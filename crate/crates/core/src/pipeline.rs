//! Run-directory workflows shared by the command-line tool and the tests.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{build_report, evaluate_domains, load_inference_model, write_report, Report, RunResult};
use crate::nn::Task;
use crate::objective::LossWeights;
use crate::parallel::map_indexed;
use crate::synth::{load_split, read_manifest, DataSource, Domain, FsSource, Split};
use crate::train::{train_run, write_metrics, Method, TrainConfig, INFERENCE_CHECKPOINT, METRICS_FILE};

pub const RUN_INFO_FILE: &str = "run.json";
pub const EVAL_FILE: &str = "eval.json";

/// Summary written next to a run's checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub label: String,
    pub method: Method,
    pub task: Task,
    pub seed: u64,
    #[serde(default)]
    pub settings: Vec<(String, String)>,
    pub steps: usize,
    pub final_loss_task: f64,
    pub final_loss_feat: Option<f64>,
    /// SHA-256 of the full checkpoint.
    pub checksum: String,
    pub wall_seconds: f64,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// Trains `cfg.train` on the dataset at `data_root` and writes checkpoints,
/// the metric log, the resolved config and `run.json` into `out_dir`.
pub fn train_to_dir(
    cfg: &RunConfig,
    data_root: &Path,
    out_dir: &Path,
    label: &str,
    settings: &[(String, String)],
    workers: usize,
) -> Result<RunInfo> {
    cfg.validate()?;
    let source = FsSource;
    let manifest = read_manifest(data_root, &source)?;
    let method = cfg.train.method;
    let samples = load_split(data_root, &manifest, Split::Train, None, method.uses_events(), &source, workers)?;
    cfg.echo(out_dir)?;

    let metrics_path = out_dir.join(METRICS_FILE);
    let file = fs::File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let mut writer = BufWriter::new(file);
    let mut write_err = None;
    let every = (cfg.train.total_steps(samples.len()) / 20).max(1);
    let result = train_run(&samples, &cfg.model, &cfg.train, &mut |r| {
        if r.step % every == 0 {
            log::info!(
                "{label} step {} lr {:.2e} task {:.4} feat {}",
                r.step,
                r.lr,
                r.loss_task,
                r.loss_feat.map_or("-".into(), |v| format!("{v:.4}"))
            );
        }
        if write_err.is_none() {
            if let Err(e) = write_metrics(&mut writer, std::slice::from_ref(r)) {
                write_err = Some(e);
            }
        }
    });
    if let Err(e) = writer.flush() {
        write_err.get_or_insert(e);
    }
    if let Some(e) = write_err {
        return Err(Error::io(&metrics_path, e));
    }
    let run = result?;
    run.save_checkpoints(out_dir)?;
    let last = run.log.last().expect("at least one step");
    let info = RunInfo {
        label: label.to_string(),
        method,
        task: cfg.train.task,
        seed: cfg.train.seed,
        settings: settings.to_vec(),
        steps: run.log.len(),
        final_loss_task: last.loss_task,
        final_loss_feat: last.loss_feat,
        checksum: run.checksum(),
        wall_seconds: run.wall_seconds,
    };
    write_json(&out_dir.join(RUN_INFO_FILE), &info)?;
    Ok(info)
}

pub fn read_run_info(dir: &Path) -> Result<RunInfo> {
    read_json(&dir.join(RUN_INFO_FILE))
}

/// Evaluates an inference checkpoint on the eval split of each domain.
/// Only RGB files are read, through `source`.
pub fn eval_checkpoint(
    ckpt: &Path,
    data_root: &Path,
    domains: &[Domain],
    info: &RunInfo,
    source: &dyn DataSource,
    workers: usize,
) -> Result<RunResult> {
    let model = load_inference_model(ckpt)?;
    let manifest = read_manifest(data_root, source)?;
    let outcomes = evaluate_domains(&model, data_root, &manifest, domains, source, workers);
    Ok(RunResult {
        label: info.label.clone(),
        method: info.method,
        seed: info.seed,
        task: model.task,
        settings: info.settings.clone(),
        domains: outcomes,
    })
}

pub fn write_eval(result: &RunResult, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(EVAL_FILE);
    write_json(&path, result)?;
    Ok(path)
}

fn find_eval_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            find_eval_files(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == EVAL_FILE) {
            out.push(p);
        }
    }
    Ok(())
}

/// Every `eval.json` below the given directories, ordered by method, label
/// and seed.
pub fn collect_results(dirs: &[PathBuf]) -> Result<Vec<RunResult>> {
    let mut files = Vec::new();
    for d in dirs {
        find_eval_files(d, &mut files)?;
    }
    if files.is_empty() {
        return Err(Error::InvalidInput(format!("no {EVAL_FILE} found under {dirs:?}")));
    }
    let mut results: Vec<RunResult> = files.iter().map(|p| read_json(p)).collect::<Result<_>>()?;
    let rank = |m: Method| Method::ALL.iter().position(|x| *x == m).unwrap_or(usize::MAX);
    results.sort_by(|a, b| {
        rank(a.method)
            .cmp(&rank(b.method))
            .then_with(|| a.label.cmp(&b.label))
            .then(a.seed.cmp(&b.seed))
    });
    Ok(results)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    Patch,
    Loss,
}

impl std::str::FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "patch" => Ok(AblationAxis::Patch),
            "loss" => Ok(AblationAxis::Loss),
            _ => Err(Error::InvalidInput(format!("unknown ablation axis {s:?}"))),
        }
    }
}

/// Patch sizes and counts swept on the patch axis.
pub const PATCH_SIZES: [usize; 2] = [2, 4];
pub const PATCH_COUNTS: [usize; 2] = [2, 4];
/// `(lambda_task, lambda_feat)` pairs swept on the loss axis.
pub const LOSS_GRID: [(f64, f64); 5] = [(1.0, 0.5), (1.0, 0.1), (0.5, 1.0), (0.1, 1.0), (1.0, 1.0)];

#[derive(Debug, Clone, PartialEq)]
pub struct AblationPoint {
    pub label: String,
    pub settings: Vec<(String, String)>,
    pub train: TrainConfig,
}

pub fn ablation_points(axis: AblationAxis, base: &TrainConfig) -> Vec<AblationPoint> {
    let mut base = base.clone();
    base.method = Method::Pepr;
    match axis {
        AblationAxis::Patch => {
            let mut out = Vec::new();
            for s in PATCH_SIZES {
                for m in PATCH_COUNTS {
                    let mut t = base.clone();
                    t.sampler.patch_size = s;
                    t.sampler.num_patches = m;
                    out.push(AblationPoint {
                        label: format!("pepr_s{s}_m{m}"),
                        settings: vec![("patch_size".into(), s.to_string()), ("num_patches".into(), m.to_string())],
                        train: t,
                    });
                }
            }
            out
        }
        AblationAxis::Loss => LOSS_GRID
            .iter()
            .map(|&(task, feat)| {
                let mut t = base.clone();
                t.loss = LossWeights { task, feat };
                AblationPoint {
                    label: format!("pepr_task{task}_feat{feat}"),
                    settings: vec![("lambda_task".into(), task.to_string()), ("lambda_feat".into(), feat.to_string())],
                    train: t,
                }
            })
            .collect(),
    }
}

/// One train and eval per grid point under `out_dir/runs`, then the report
/// into `out_dir`.
pub fn run_ablation(
    cfg: &RunConfig,
    axis: AblationAxis,
    data_root: &Path,
    out_dir: &Path,
    workers: usize,
) -> Result<Report> {
    let points = ablation_points(axis, &cfg.train);
    for p in &points {
        let mut c = cfg.clone();
        c.train = p.train.clone();
        c.validate()?;
    }
    let results = map_indexed(points.len(), workers, |i| {
        let p = &points[i];
        let mut c = cfg.clone();
        c.train = p.train.clone();
        let dir = out_dir.join("runs").join(&p.label);
        let info = train_to_dir(&c, data_root, &dir, &p.label, &p.settings, 1)?;
        let result = eval_checkpoint(
            &dir.join(INFERENCE_CHECKPOINT),
            data_root,
            &cfg.eval_domains,
            &info,
            &FsSource,
            1,
        )?;
        write_eval(&result, &dir)?;
        Ok(result)
    })?
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let report = build_report(&results)?;
    write_report(&report, out_dir)?;
    Ok(report)
}
