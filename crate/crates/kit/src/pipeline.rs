//! Pretrain, transfer and report stages over a run directory.
//!
//! A run directory holds `config.toml`, `manifest.json`, `checkpoint.bin`,
//! `loss.jsonl`, `reports.jsonl` and `summary.txt`. Its name is derived from
//! the config, so rerunning the same config resumes the same directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use unissl_core::datasets::{make_synthetic_domain, DatasetSpec, Phase, RawExample, Registry, SyntheticDomainConfig};
use unissl_core::encoder::EncoderConfig;
use unissl_core::model::{Model, ModelConfig};
use unissl_core::objectives::Objective;
use unissl_core::pretrain::{PretrainConfig, Trainer};
use unissl_core::transfer::{evaluate, extract_features, train_linear_probe, MetricReport, ProbeTask};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::{KitError, Result};
use crate::registry_file;

pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOSS_FILE: &str = "loss.jsonl";
pub const REPORTS_FILE: &str = "reports.jsonl";
pub const SUMMARY_FILE: &str = "summary.txt";

/// `{spec}-{objective}-seed{seed}-{hash8}`; the hash covers every key except
/// the output location.
pub fn run_id(cfg: &RunConfig) -> String {
    let mut keyed = cfg.clone();
    keyed.output_dir = PathBuf::new();
    let hash = Sha256::digest(keyed.to_toml().as_bytes());
    format!("{}-{}-seed{}-{}", cfg.spec, cfg.objective, cfg.seed, &format!("{hash:x}")[..8])
}

pub fn run_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.join(run_id(cfg))
}

pub fn registry_for(cfg: &RunConfig) -> Result<Registry> {
    match &cfg.registry {
        Some(path) => registry_file::builtin_with_file(path),
        None => Ok(Registry::builtin()),
    }
}

pub fn model_config(cfg: &RunConfig, spec: &DatasetSpec) -> Result<ModelConfig> {
    let encoder = EncoderConfig::reduced(cfg.layers, cfg.d_model, cfg.heads);
    Ok(ModelConfig::for_spec(spec, encoder)?)
}

pub fn pretrain_config(cfg: &RunConfig, spec: &DatasetSpec) -> PretrainConfig {
    PretrainConfig {
        objective: cfg.objective_config(),
        optimizer: cfg.optimizer(),
        batch_size: cfg.batch_size.unwrap_or(spec.batch_size),
        seed: cfg.seed,
    }
}

/// Train and validation examples for one spec.
pub struct Splits {
    pub train: Vec<RawExample>,
    pub val: Vec<RawExample>,
}

/// Without a data directory, examples come from the synthetic generator
/// shaped like `spec`; with one, from `{data_dir}/{spec}/{train,val}.jsonl`
/// holding preprocessed examples.
pub fn load_splits(cfg: &RunConfig, spec: &DatasetSpec) -> Result<Splits> {
    match &cfg.data_dir {
        Some(dir) => {
            let base = dir.join(&spec.name);
            Ok(Splits { train: read_examples(&base.join("train.jsonl"))?, val: read_examples(&base.join("val.jsonl"))? })
        }
        None => {
            let mut dc = SyntheticDomainConfig::for_spec(spec, cfg.data_seed);
            dc.num_train = cfg.num_train.unwrap_or(spec.num_train);
            dc.num_val = cfg.num_val.unwrap_or(spec.num_val);
            if let Some(noise) = cfg.noise_scale {
                dc.noise_scale = noise;
            }
            let d = make_synthetic_domain(&dc)?;
            Ok(Splits { train: d.train, val: d.val })
        }
    }
}

pub fn read_examples(path: &Path) -> Result<Vec<RawExample>> {
    let text = std::fs::read_to_string(path).map_err(KitError::io(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| KitError::Format { path: path.to_path_buf(), reason: format!("line {}: {e}", i + 1) })
        })
        .collect()
}

/// Transfer tasks for a run: the spec itself for generated data, otherwise
/// every registered spec in the same domain that carries a metric.
pub fn transfer_tasks<'a>(cfg: &RunConfig, registry: &'a Registry, spec: &'a DatasetSpec) -> Vec<&'a DatasetSpec> {
    if cfg.data_dir.is_none() {
        return vec![spec];
    }
    registry
        .iter()
        .filter(|s| s.domain == spec.domain && s.metric.is_some() && s.phase != Phase::Pretrain)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LossRecord {
    step: u64,
    loss: f64,
    wall_time_s: f64,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(KitError::io(&tmp))?;
    std::fs::rename(&tmp, path).map_err(KitError::io(path))
}

/// Keeps only loss records up to `step` so a resumed run appends cleanly.
fn trim_loss_log(path: &Path, step: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let text = std::fs::read_to_string(path).map_err(KitError::io(path))?;
    let mut kept = String::new();
    for line in text.lines() {
        match serde_json::from_str::<LossRecord>(line) {
            Ok(r) if r.step <= step => {
                kept.push_str(line);
                kept.push('\n');
            }
            _ => {}
        }
    }
    write_atomic(path, kept.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainOutcome {
    pub checkpoint: PathBuf,
    pub digest: String,
    pub step: u64,
    /// Step the run resumed from, if any.
    pub resumed_from: Option<u64>,
}

/// Runs (or resumes) pretraining into `dir`.
pub fn pretrain(cfg: &RunConfig, dir: &Path) -> Result<PretrainOutcome> {
    let registry = registry_for(cfg)?;
    let spec = registry.get(&cfg.spec)?;
    let mc = model_config(cfg, spec)?;
    let pc = pretrain_config(cfg, spec);
    let ckpt = dir.join(CHECKPOINT_FILE);
    let loss_path = dir.join(LOSS_FILE);

    let (mut trainer, resumed_from) = if ckpt.exists() {
        let loaded = checkpoint::load::<f32>(&ckpt)?;
        let h = &loaded.header;
        if h.spec != spec.name || h.model != mc || h.pretrain != pc {
            return Err(KitError::Checkpoint { path: ckpt, reason: "was written by a different config".into() });
        }
        if h.step > cfg.steps {
            return Err(KitError::Checkpoint {
                path: ckpt,
                reason: format!("is at step {}, beyond the configured {} steps", h.step, cfg.steps),
            });
        }
        if cfg.objective == Objective::None || h.step == cfg.steps {
            return Ok(PretrainOutcome { checkpoint: ckpt, digest: loaded.digest, step: h.step, resumed_from: Some(h.step) });
        }
        trim_loss_log(&loss_path, h.step)?;
        let step = h.step;
        (loaded.trainer, Some(step))
    } else {
        std::fs::remove_file(&loss_path).or_else(|e| if e.kind() == std::io::ErrorKind::NotFound { Ok(()) } else { Err(e) }).map_err(KitError::io(&loss_path))?;
        (Trainer::new(Model::<f32>::new(mc, cfg.seed)?, pc)?, None)
    };

    if cfg.objective == Objective::None {
        let digest = checkpoint::save(&ckpt, &spec.name, &trainer)?;
        return Ok(PretrainOutcome { checkpoint: ckpt, digest, step: 0, resumed_from });
    }

    let data = load_splits(cfg, spec)?.train;
    let mut log = std::fs::OpenOptions::new().create(true).append(true).open(&loss_path).map_err(KitError::io(&loss_path))?;
    let start = Instant::now();
    let mut digest = None;
    while trainer.step_count() < cfg.steps {
        let loss = trainer.step(&data)?;
        let step = trainer.step_count();
        if cfg.log_every > 0 && (step % cfg.log_every == 0 || step == 1 || step == cfg.steps) {
            let rec = LossRecord { step, loss, wall_time_s: start.elapsed().as_secs_f64() };
            let line = serde_json::to_string(&rec).expect("loss record serializes");
            writeln!(log, "{line}").map_err(KitError::io(&loss_path))?;
        }
        if step == cfg.steps || (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
            log.flush().map_err(KitError::io(&loss_path))?;
            digest = Some(checkpoint::save(&ckpt, &spec.name, &trainer)?);
        }
    }
    let digest = match digest {
        Some(d) => d,
        None => checkpoint::save(&ckpt, &spec.name, &trainer)?,
    };
    Ok(PretrainOutcome { checkpoint: ckpt, digest, step: trainer.step_count(), resumed_from })
}

/// A report tagged with what produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggedReport {
    pub domain: String,
    pub objective: Objective,
    #[serde(flatten)]
    pub report: MetricReport,
}

/// Probes every transfer task on the run's checkpoint and writes `reports.jsonl`.
pub fn transfer(cfg: &RunConfig, dir: &Path) -> Result<Vec<TaggedReport>> {
    let registry = registry_for(cfg)?;
    let spec = registry.get(&cfg.spec)?;
    let ckpt = dir.join(CHECKPOINT_FILE);
    if !ckpt.exists() {
        return Err(KitError::Config(format!("no checkpoint at {}; run the pretrain stage first", ckpt.display())));
    }
    let loaded = checkpoint::load::<f32>(&ckpt)?;
    let model = &loaded.trainer.model;
    let probe_cfg = cfg.probe();
    let mut reports = Vec::new();
    for task_spec in transfer_tasks(cfg, &registry, spec) {
        let expected = model_config(cfg, task_spec)?;
        if expected.embedders != model.config.embedders {
            return Err(KitError::Config(format!(
                "task `{}` does not fit the embedders of checkpoint spec `{}`",
                task_spec.name, loaded.header.spec
            )));
        }
        let metric = task_spec.metric.expect("transfer tasks carry a metric");
        let splits = load_splits(cfg, task_spec)?;
        let train = extract_features(model, &splits.train, cfg.probe_batch_size)?;
        let val = extract_features(model, &splits.val, cfg.probe_batch_size)?;
        let task = ProbeTask::infer(task_spec.name.clone(), metric, &train.targets)?;
        let probe = train_linear_probe(&train, &task, &probe_cfg, cfg.seed)?;
        let report = evaluate(&probe, &val, &task, &loaded.digest, cfg.seed)?;
        reports.push(TaggedReport { domain: task_spec.domain.clone(), objective: cfg.objective, report });
    }
    let mut text = String::new();
    for r in &reports {
        text.push_str(&serde_json::to_string(r).expect("report serializes"));
        text.push('\n');
    }
    write_atomic(&dir.join(REPORTS_FILE), text.as_bytes())?;
    Ok(reports)
}

pub fn read_reports(path: &Path) -> Result<Vec<TaggedReport>> {
    let text = std::fs::read_to_string(path).map_err(KitError::io(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| KitError::Format { path: path.to_path_buf(), reason: e.to_string() }))
        .collect()
}

/// Reports of one objective within one domain, with their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSummary {
    pub domain: String,
    pub objective: Objective,
    pub reports: Vec<MetricReport>,
    pub mean: f64,
}

/// Groups by (objective, domain) and averages. Members are sorted before
/// summing, so the result does not depend on input order.
pub fn aggregate(reports: &[TaggedReport]) -> Result<Vec<DomainSummary>> {
    if reports.is_empty() {
        return Err(KitError::Config("nothing to aggregate: no reports".into()));
    }
    let mut groups: BTreeMap<(&str, &str), Vec<&TaggedReport>> = BTreeMap::new();
    for r in reports {
        groups.entry((r.objective.as_str(), r.domain.as_str())).or_default().push(r);
    }
    Ok(groups
        .into_values()
        .map(|mut members| {
            members.sort_by(|a, b| {
                (&a.report.task, a.report.seed, &a.report.checkpoint)
                    .cmp(&(&b.report.task, b.report.seed, &b.report.checkpoint))
                    .then(a.report.value.total_cmp(&b.report.value))
            });
            let mean = members.iter().map(|r| r.report.value).sum::<f64>() / members.len() as f64;
            DomainSummary {
                domain: members[0].domain.clone(),
                objective: members[0].objective,
                reports: members.iter().map(|r| r.report.clone()).collect(),
                mean,
            }
        })
        .collect())
}

/// Plain-text table: one row per objective, one column per domain.
pub fn render_table(summaries: &[DomainSummary]) -> String {
    let mut domains: Vec<&str> = summaries.iter().map(|s| s.domain.as_str()).collect();
    domains.sort_unstable();
    domains.dedup();
    let objectives: Vec<Objective> =
        Objective::ALL.into_iter().filter(|o| summaries.iter().any(|s| s.objective == *o)).collect();
    let width = domains.iter().map(|d| d.len()).max().unwrap_or(0).max(8);
    let mut out = format!("{:<10}", "objective");
    for d in &domains {
        let _ = write!(out, " {d:>width$}");
    }
    out.push('\n');
    for o in objectives {
        let _ = write!(out, "{:<10}", o.as_str());
        for d in &domains {
            match summaries.iter().find(|s| s.objective == o && s.domain == *d) {
                Some(s) => {
                    let _ = write!(out, " {:>width$.2}", s.mean);
                }
                None => {
                    let _ = write!(out, " {:>width$}", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}

/// Aggregates `reports.jsonl` from every run directory under `root` and
/// writes `summary.txt` and `summary.jsonl` there.
pub fn report(root: &Path) -> Result<Vec<DomainSummary>> {
    let mut reports = Vec::new();
    let entries = std::fs::read_dir(root).map_err(KitError::io(root))?;
    let mut dirs: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
    dirs.sort();
    for d in dirs {
        let path = d.join(REPORTS_FILE);
        if path.exists() {
            reports.extend(read_reports(&path)?);
        }
    }
    let summaries = aggregate(&reports)?;
    write_atomic(&root.join(SUMMARY_FILE), render_table(&summaries).as_bytes())?;
    let mut jsonl = String::new();
    for s in &summaries {
        jsonl.push_str(&serde_json::to_string(s).expect("summary serializes"));
        jsonl.push('\n');
    }
    write_atomic(&root.join("summary.jsonl"), jsonl.as_bytes())?;
    Ok(summaries)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub config: PathBuf,
    pub checkpoint: PathBuf,
    pub loss_log: PathBuf,
    pub reports: PathBuf,
    pub summary: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub toolkit_version: String,
    pub seed: u64,
    pub config: RunConfig,
    /// Seconds since the Unix epoch.
    pub started_at: f64,
    pub finished_at: f64,
    pub artifacts: Artifacts,
    pub checkpoint_digest: Option<String>,
    pub step: u64,
    pub resumed_from: Option<u64>,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Which stages a command runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stages {
    Pretrain,
    Transfer,
    All,
}

/// Runs the requested stages in the config's run directory and writes the manifest.
pub fn run_experiment(cfg: &RunConfig, stages: Stages) -> Result<RunManifest> {
    let started_at = now();
    let dir = run_dir(cfg);
    std::fs::create_dir_all(&dir).map_err(KitError::io(&dir))?;
    // fail fast on a bad spec or registry before any work
    registry_for(cfg)?.get(&cfg.spec)?;
    write_atomic(&dir.join(CONFIG_FILE), cfg.to_toml().as_bytes())?;

    let mut outcome = None;
    if matches!(stages, Stages::Pretrain | Stages::All) {
        outcome = Some(pretrain(cfg, &dir).map_err(KitError::in_stage("pretrain"))?);
    }
    if matches!(stages, Stages::Transfer | Stages::All) {
        let reports = transfer(cfg, &dir).map_err(KitError::in_stage("transfer"))?;
        let summaries = aggregate(&reports).map_err(KitError::in_stage("transfer"))?;
        write_atomic(&dir.join(SUMMARY_FILE), render_table(&summaries).as_bytes())?;
    }
    let (digest, step, resumed_from) = match &outcome {
        Some(o) => (Some(o.digest.clone()), o.step, o.resumed_from),
        None => {
            let ckpt = dir.join(CHECKPOINT_FILE);
            let loaded = checkpoint::load::<f32>(&ckpt).ok();
            (loaded.as_ref().map(|l| l.digest.clone()), loaded.map(|l| l.header.step).unwrap_or(0), None)
        }
    };
    let manifest = RunManifest {
        run_id: run_id(cfg),
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        config: cfg.clone(),
        started_at,
        finished_at: now(),
        artifacts: Artifacts {
            config: dir.join(CONFIG_FILE),
            checkpoint: dir.join(CHECKPOINT_FILE),
            loss_log: dir.join(LOSS_FILE),
            reports: dir.join(REPORTS_FILE),
            summary: dir.join(SUMMARY_FILE),
        },
        checkpoint_digest: digest,
        step,
        resumed_from,
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    write_atomic(&dir.join(MANIFEST_FILE), &json)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use unissl_core::transfer::Metric;

    fn tagged(domain: &str, objective: Objective, task: &str, value: f64) -> TaggedReport {
        TaggedReport {
            domain: domain.into(),
            objective,
            report: MetricReport {
                task: task.into(),
                metric: Metric::Accuracy,
                value,
                n_examples: 10,
                checkpoint: "c".into(),
                seed: 0,
            },
        }
    }

    #[test]
    fn aggregate_means_and_order_invariance() {
        let a = tagged("natural_images", Objective::None, "cifar10", 10.1);
        let b = tagged("natural_images", Objective::None, "dtd", 42.3);
        let c = tagged("text", Objective::None, "cola", 0.5);
        let s = aggregate(&[a.clone(), b.clone(), c.clone()]).unwrap();
        assert_eq!(s.len(), 2);
        assert!((s[0].mean - 26.2).abs() < 1e-12);
        assert_eq!(aggregate(&[c, b, a]).unwrap(), s);
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn singleton_summary_equals_input() {
        let r = tagged("sensor", Objective::Shed, "pamap2", 71.25);
        let s = aggregate(std::slice::from_ref(&r)).unwrap();
        assert_eq!(s[0].mean, 71.25);
        assert_eq!(s[0].reports, vec![r.report]);
    }

    #[test]
    fn table_has_objective_rows_and_domain_columns() {
        let s = aggregate(&[
            tagged("a", Objective::Emix, "t", 1.0),
            tagged("b", Objective::None, "t", 2.0),
        ])
        .unwrap();
        let table = render_table(&s);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("emix") && lines[1].contains("1.00") && lines[1].contains('-'));
        assert!(lines[2].starts_with("none") && lines[2].contains("2.00"));
    }

    #[test]
    fn reports_serialize_as_flat_records() {
        let line = serde_json::to_string(&tagged("d", Objective::Emix, "t", 3.0)).unwrap();
        assert!(line.contains("\"task\":\"t\"") && line.contains("\"objective\":\"emix\""), "{line}");
        let back: TaggedReport = serde_json::from_str(&line).unwrap();
        assert_eq!(back.report.value, 3.0);
    }
}
