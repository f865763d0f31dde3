//! Config-driven experiment runner.
//!
//! One TOML file describes a full experiment: dataset (generator or CSV
//! pair), model sizes, training hyperparameters, loss ablation, and the
//! analysis toggles. Every command writes the resolved config next to its
//! outputs; re-running that copy reproduces every numeric output bit for
//! bit. The only environment overrides honored are `CVP_SEED` and
//! `CVP_OUT`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{correlate, oscillation_suite, sigma_trajectory, SigmaTrajectory, UncertaintyReport};
use crate::data::{
    generate, load_csv, save_csv, BaseDistribution, CsvSchema, Domain, DomainDataset,
    DomainTransform, ShiftSpec,
};
use crate::error::{CvpError, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::plot::{line_plot_svg, scatter_svg, Series};
use crate::rng::{derive_seed, Stream};
use crate::trainer::{
    accuracy, advance_cycle, load_checkpoint, save_checkpoint, write_metrics_csv, TrainConfig,
    TrainState,
};

// ── config sections ──────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    TwoMoons,
    Blobs,
    Rings,
    Csv,
}

/// Dataset section: either a generator recipe or a CSV pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub samples_per_class: usize,
    pub noise_std: f64,
    /// Class count for `blobs`, ring count for `rings`.
    pub classes: usize,
    pub transform: DomainTransform,
    /// CSV mode: file paths and their declared shape.
    pub source: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub feature_dim: usize,
    pub n_classes: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            kind: DatasetKind::TwoMoons,
            samples_per_class: 250,
            noise_std: 0.1,
            classes: 12,
            transform: DomainTransform { rotation_deg: 30.0, ..DomainTransform::identity() },
            source: None,
            target: None,
            feature_dim: 2,
            n_classes: 2,
        }
    }
}

impl DatasetConfig {
    pub fn shift_spec(&self) -> Result<ShiftSpec> {
        let base = match self.kind {
            DatasetKind::TwoMoons => BaseDistribution::TwoMoons,
            DatasetKind::Blobs => BaseDistribution::Blobs { classes: self.classes },
            DatasetKind::Rings => BaseDistribution::Rings { rings: self.classes },
            DatasetKind::Csv => {
                return Err(CvpError::config("csv datasets have no generator spec"))
            }
        };
        let spec = ShiftSpec {
            base,
            samples_per_class: self.samples_per_class,
            noise_std: self.noise_std,
            transform: self.transform.clone(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn resolved_n_classes(&self) -> Result<usize> {
        match self.kind {
            DatasetKind::Csv => Ok(self.n_classes),
            _ => Ok(self.shift_spec()?.base.n_classes()),
        }
    }

    pub fn resolved_input_dim(&self) -> usize {
        match self.kind {
            DatasetKind::Csv => self.feature_dim,
            _ => 2,
        }
    }

    /// Generate or load the source/target pair.
    pub fn load(&self, seed: u64) -> Result<(DomainDataset, DomainDataset)> {
        match self.kind {
            DatasetKind::Csv => {
                let src_path = self
                    .source
                    .as_ref()
                    .ok_or_else(|| CvpError::config("csv dataset needs 'source'"))?;
                let tgt_path = self
                    .target
                    .as_ref()
                    .ok_or_else(|| CvpError::config("csv dataset needs 'target'"))?;
                let source = load_csv(
                    src_path,
                    &CsvSchema {
                        feature_dim: self.feature_dim,
                        n_classes: self.n_classes,
                        domain: Domain::Source,
                    },
                )?;
                let target = load_csv(
                    tgt_path,
                    &CsvSchema {
                        feature_dim: self.feature_dim,
                        n_classes: self.n_classes,
                        domain: Domain::Target,
                    },
                )?;
                Ok((source, target))
            }
            _ => generate(&self.shift_spec()?, seed),
        }
    }
}

/// Model section; input size and class count come from the dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub feature_dim: usize,
    pub extractor_hidden: Vec<usize>,
    pub classifier_hidden: usize,
    pub mcd_dropout_rate: f64,
    pub sigma_floor: f64,
    /// Initialization seed; derived from the experiment seed when absent.
    pub seed: Option<u64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = ModelConfig::default();
        ModelSection {
            feature_dim: d.feature_dim,
            extractor_hidden: d.extractor_hidden,
            classifier_hidden: d.classifier_hidden,
            mcd_dropout_rate: d.mcd_dropout_rate,
            sigma_floor: d.sigma_floor,
            seed: None,
        }
    }
}

/// Analysis toggles.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub oscillation: bool,
    pub oscillation_per_class: usize,
    pub oscillation_k: usize,
    pub correlation: bool,
    pub mcd_passes: usize,
    pub trajectory: bool,
    pub svg: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            oscillation: true,
            oscillation_per_class: 5,
            oscillation_k: 1000,
            correlation: true,
            mcd_passes: 20,
            trajectory: true,
            svg: true,
        }
    }
}

/// The whole experiment file.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Master seed; the train seed and (unless pinned) the model init seed
    /// derive from it.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub analysis: AnalysisConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CvpError::Toml(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| CvpError::Toml(e.to_string()))
    }

    /// Read a config file and apply the `CVP_SEED` / `CVP_OUT` environment
    /// overrides.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CvpError::config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Ok(seed) = std::env::var("CVP_SEED") {
            cfg.seed = seed
                .parse()
                .map_err(|_| CvpError::config(format!("CVP_SEED is not an integer: {seed}")))?;
        }
        if let Ok(out) = std::env::var("CVP_OUT") {
            cfg.out_dir = PathBuf::from(out);
        }
        Ok(cfg)
    }

    /// Fill every derived field and validate. The returned config is what
    /// gets written next to outputs: re-running it is exact.
    pub fn resolve(&self) -> Result<ResolvedExperiment> {
        let n_classes = self.dataset.resolved_n_classes()?;
        if n_classes < 2 {
            return Err(CvpError::config("experiments need at least two classes"));
        }
        let model = ModelConfig {
            input_dim: self.dataset.resolved_input_dim(),
            feature_dim: self.model.feature_dim,
            extractor_hidden: self.model.extractor_hidden.clone(),
            classifier_hidden: self.model.classifier_hidden,
            n_classes,
            mcd_dropout_rate: self.model.mcd_dropout_rate,
            sigma_floor: self.model.sigma_floor,
            seed: self.model.seed.unwrap_or_else(|| derive_seed(self.seed, Stream::Init, &[])),
        };
        model.validate()?;
        let mut train = self.train.clone();
        train.seed = self.seed;
        train.validate()?;

        let mut resolved_cfg = self.clone();
        resolved_cfg.model.seed = Some(model.seed);
        resolved_cfg.train = train.clone();
        Ok(ResolvedExperiment { cfg: resolved_cfg, model, train })
    }
}

/// A validated experiment with every derived value pinned.
#[derive(Debug, Clone)]
pub struct ResolvedExperiment {
    pub cfg: ExperimentConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn write_resolved_config(dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    std::fs::write(dir.join("config.resolved.toml"), cfg.to_toml_string()?)?;
    Ok(())
}

// ── commands ─────────────────────────────────────────────────────────────

/// Outputs of `generate`: the two CSV paths.
#[derive(Debug)]
pub struct GenerateOutputs {
    pub source: PathBuf,
    pub target: PathBuf,
}

pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<GenerateOutputs> {
    let resolved = cfg.resolve()?;
    if cfg.dataset.kind == DatasetKind::Csv {
        return Err(CvpError::config("dataset kind 'csv' has nothing to generate"));
    }
    let dir = &resolved.cfg.out_dir;
    ensure_dir(dir)?;
    let (source, target) = cfg.dataset.load(resolved.cfg.seed)?;
    let src_path = dir.join("source.csv");
    let tgt_path = dir.join("target.csv");
    save_csv(&source, &src_path)?;
    save_csv(&target, &tgt_path)?;
    write_resolved_config(dir, &resolved.cfg)?;
    Ok(GenerateOutputs { source: src_path, target: tgt_path })
}

/// Outputs of `train`.
#[derive(Debug)]
pub struct TrainOutputs {
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub final_src_acc: f64,
    pub final_tgt_acc: Option<f64>,
}

/// Run the two-phase loop to completion (optionally resuming), writing the
/// checkpoint, the per-cycle metrics CSV and the resolved config.
pub fn cmd_train(cfg: &ExperimentConfig, resume: Option<&Path>) -> Result<TrainOutputs> {
    let resolved = cfg.resolve()?;
    let dir = resolved.cfg.out_dir.clone();
    ensure_dir(&dir)?;

    let (source, target) = cfg.dataset.load(resolved.cfg.seed)?;
    run_training(&resolved, &source, &target, &dir, resume)
}

/// Training loop shared by `train` and `sweep`. Separated so callers can
/// supply pre-built datasets.
pub fn run_training(
    resolved: &ResolvedExperiment,
    source: &DomainDataset,
    target: &DomainDataset,
    dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainOutputs> {
    let (model_cfg, train_cfg, mut state) = match resume {
        Some(path) => load_checkpoint(path)?,
        None => {
            let state = TrainState::new(&resolved.model, &resolved.train)?;
            (resolved.model.clone(), resolved.train.clone(), state)
        }
    };
    if model_cfg.input_dim != source.feature_dim() {
        return Err(CvpError::shape(format!(
            "model expects {}-dimensional inputs but the dataset has {}",
            model_cfg.input_dim,
            source.feature_dim()
        )));
    }

    let ckpt_path = dir.join("checkpoint.json");
    while state.cycle < train_cfg.total_cycles() {
        advance_cycle(&mut state, source, Some(target), &model_cfg, &train_cfg)?;
        if train_cfg.checkpoint_every > 0 && state.cycle % train_cfg.checkpoint_every == 0 {
            save_checkpoint(&ckpt_path, &model_cfg, &train_cfg, &state)?;
        }
    }
    save_checkpoint(&ckpt_path, &model_cfg, &train_cfg, &state)?;

    let metrics_path = dir.join("metrics.csv");
    write_metrics_csv(&metrics_path, &state.history)?;
    write_resolved_config(dir, &resolved.cfg)?;

    Ok(TrainOutputs {
        checkpoint: ckpt_path,
        metrics: metrics_path,
        final_src_acc: accuracy(&state.params, source)?.unwrap_or(0.0),
        final_tgt_acc: accuracy(&state.params, target)?,
    })
}

/// Everything `analyze` writes, plus the in-memory results.
#[derive(Debug)]
pub struct AnalyzeOutputs {
    pub report: PathBuf,
    pub oscillation_sum: Option<f64>,
    pub correlation: Option<UncertaintyReport>,
    pub trajectory: Option<SigmaTrajectory>,
}

#[derive(Serialize)]
struct ReportFile<'a> {
    oscillation_sum: Option<f64>,
    oscillation_per_class: usize,
    oscillation_k: usize,
    correlation: Option<&'a UncertaintyReport>,
    trajectory: Option<&'a SigmaTrajectory>,
}

/// Run the enabled analyses of a checkpoint against the target set.
pub fn cmd_analyze(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<AnalyzeOutputs> {
    let resolved = cfg.resolve()?;
    let dir = resolved.cfg.out_dir.join("analysis");
    ensure_dir(&dir)?;

    let (ckpt_model, ckpt_train, state) = load_checkpoint(checkpoint)?;
    let (_, target) = cfg.dataset.load(resolved.cfg.seed)?;
    if ckpt_model.input_dim != target.feature_dim() {
        return Err(CvpError::shape(format!(
            "checkpoint expects {}-dimensional inputs but the dataset has {}",
            ckpt_model.input_dim,
            target.feature_dim()
        )));
    }
    let params: &ModelParams = &state.params;
    let a = &resolved.cfg.analysis;

    let oscillation_sum = if a.oscillation {
        Some(oscillation_suite(
            params,
            &target,
            a.oscillation_per_class,
            a.oscillation_k,
            resolved.cfg.seed,
        )?)
    } else {
        None
    };

    let correlation = if a.correlation {
        let report = correlate(params, &ckpt_model, &target, a.mcd_passes, resolved.cfg.seed)?;
        write_uncertainty_csv(&dir.join("uncertainty.csv"), &report)?;
        if a.svg {
            let pts: Vec<(f64, f64)> = report
                .per_instance
                .iter()
                .map(|r| (r.sigma, r.mcd_mean))
                .collect();
            std::fs::write(
                dir.join("sigma_vs_mcd.svg"),
                scatter_svg("sigma vs MCD mean", "sigma", "MCD mean", &pts),
            )?;
        }
        Some(report)
    } else {
        None
    };

    let trajectory = if a.trajectory && !state.history.is_empty() {
        let traj = sigma_trajectory(&state.history, ckpt_train.pretrain_cycles)?;
        if a.svg {
            std::fs::write(dir.join("sigma_trajectory.svg"), trajectory_svg(&traj))?;
        }
        Some(traj)
    } else {
        None
    };

    let report_path = dir.join("report.json");
    let file = std::io::BufWriter::new(std::fs::File::create(&report_path)?);
    serde_json::to_writer_pretty(
        file,
        &ReportFile {
            oscillation_sum,
            oscillation_per_class: a.oscillation_per_class,
            oscillation_k: a.oscillation_k,
            correlation: correlation.as_ref(),
            trajectory: trajectory.as_ref(),
        },
    )?;
    write_resolved_config(&dir, &resolved.cfg)?;

    Ok(AnalyzeOutputs { report: report_path, oscillation_sum, correlation, trajectory })
}

fn write_uncertainty_csv(path: &Path, report: &UncertaintyReport) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "id,sigma,max_logit,gt_logit,logit_gap,mcd_mean,mcd_std")?;
    for r in &report.per_instance {
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            r.id,
            r.sigma,
            r.max_logit,
            r.gt_logit.map_or(String::new(), |v| format!("{v}")),
            r.logit_gap,
            r.mcd_mean,
            r.mcd_std
        )?;
    }
    Ok(())
}

fn trajectory_svg(traj: &SigmaTrajectory) -> String {
    let src: Vec<(f64, f64)> = traj
        .cycles
        .iter()
        .zip(&traj.sigma_src)
        .map(|(&c, &s)| (c as f64, s))
        .collect();
    let tgt: Vec<(f64, f64)> = traj
        .cycles
        .iter()
        .zip(&traj.sigma_tgt)
        .filter_map(|(&c, &s)| s.map(|v| (c as f64, v)))
        .collect();
    line_plot_svg(
        "median sigma per cycle",
        "cycle",
        "sigma",
        &[
            Series { label: "source".into(), points: src },
            Series { label: "target".into(), points: tgt },
        ],
    )
}

// ── sweeps ───────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Alpha,
    M,
}

impl std::str::FromStr for SweepAxis {
    type Err = CvpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(SweepAxis::Alpha),
            "m" | "M" => Ok(SweepAxis::M),
            other => Err(CvpError::config(format!("unknown sweep axis '{other}'"))),
        }
    }
}

/// One sweep row. Failed runs carry the error text instead of accuracies.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub src_acc: Option<f64>,
    pub tgt_acc: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug)]
pub struct SweepOutputs {
    pub table: PathBuf,
    pub rows: Vec<SweepRow>,
}

/// Independent runs along one hyperparameter axis. A failing value does not
/// abort the remaining runs.
pub fn cmd_sweep(cfg: &ExperimentConfig, axis: SweepAxis, values: &[f64]) -> Result<SweepOutputs> {
    if values.len() < 2 {
        return Err(CvpError::config("a sweep needs at least two values"));
    }
    let resolved = cfg.resolve()?;
    let dir = resolved.cfg.out_dir.clone();
    ensure_dir(&dir)?;

    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let mut sub = cfg.clone();
        let label = match axis {
            SweepAxis::Alpha => {
                sub.train.alpha = value;
                format!("alpha_{value}")
            }
            SweepAxis::M => {
                if value < 1.0 || value.fract() != 0.0 {
                    rows.push(SweepRow {
                        value,
                        src_acc: None,
                        tgt_acc: None,
                        error: Some("M must be a positive integer".into()),
                    });
                    continue;
                }
                sub.train.m_samples = value as usize;
                format!("m_{value}")
            }
        };
        sub.out_dir = dir.join(label);
        let row = match cmd_train(&sub, None) {
            Ok(out) => SweepRow {
                value,
                src_acc: Some(out.final_src_acc),
                tgt_acc: out.final_tgt_acc,
                error: None,
            },
            Err(e) => SweepRow { value, src_acc: None, tgt_acc: None, error: Some(e.to_string()) },
        };
        rows.push(row);
    }

    let table = dir.join("sweep.csv");
    {
        use std::io::Write;
        let mut f = std::io::BufWriter::new(std::fs::File::create(&table)?);
        writeln!(f, "value,src_acc,tgt_acc,error")?;
        for r in &rows {
            writeln!(
                f,
                "{},{},{},{}",
                r.value,
                r.src_acc.map_or(String::new(), |v| format!("{v}")),
                r.tgt_acc.map_or(String::new(), |v| format!("{v}")),
                r.error.clone().unwrap_or_default()
            )?;
        }
    }
    if resolved.cfg.analysis.svg {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter_map(|r| r.tgt_acc.map(|a| (r.value, a)))
            .collect();
        let axis_name = match axis {
            SweepAxis::Alpha => "alpha",
            SweepAxis::M => "M",
        };
        std::fs::write(
            dir.join("sweep.svg"),
            line_plot_svg(
                &format!("target accuracy vs {axis_name}"),
                axis_name,
                "target accuracy",
                &[Series { label: "target".into(), points: pts }],
            ),
        )?;
    }
    write_resolved_config(&dir, &resolved.cfg)?;
    Ok(SweepOutputs { table, rows })
}
