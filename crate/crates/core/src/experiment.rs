//! End-to-end runs: data loading, both training stages, scoring, the ablation
//! ladder and hyperparameter sweeps, plus their file artifacts.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::{DataSource, ExperimentConfig};
use crate::imaging::{generate_phantoms, load_dataset, Label, LabeledSample, Split};
use crate::networks::{
    load_proxy_module, load_recon_module, save_proxy_module, save_recon_module, Discriminator,
    Metadata, ProxyExtractionModule,
};
use crate::scoring::{
    evaluate_pixels, evaluate_records, score_dataset, AnomalyModel, AnomalyRecord, MetricsReport,
    PixelMetrics, LATENT, PIXEL, SI_ERROR,
};
use crate::training::{
    train_stage1_proxy, train_stage2_recon, AblationConfig, EpochRecord, Stage, Stage1Data,
    Stage1Outcome, Stage2Data, Stage2Outcome,
};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<Dataset> {
    match cfg.data.source {
        DataSource::Phantom => {
            let set = generate_phantoms(&cfg.phantom)?;
            Ok(Dataset {
                train: set.train,
                test: set.test,
            })
        }
        DataSource::Directory => {
            let root = cfg
                .data
                .root
                .as_deref()
                .ok_or_else(|| Error::Config("data.root is required".into()))?;
            Ok(Dataset {
                train: load_dataset(root, Split::Train)?,
                test: load_dataset(root, Split::Test)?,
            })
        }
    }
}

fn normal_images(train: &[LabeledSample]) -> Result<Vec<&LabeledSample>> {
    let normals: Vec<&LabeledSample> = train.iter().filter(|s| s.label == Label::Normal).collect();
    if normals.is_empty() {
        return Err(Error::Dataset("no training images".into()));
    }
    Ok(normals)
}

pub fn train_proxy_stage(cfg: &ExperimentConfig, train: &[LabeledSample]) -> Result<Stage1Outcome> {
    cfg.validate()?;
    let normals = normal_images(train)?;
    let images: Vec<_> = normals.iter().map(|s| s.image.clone()).collect();
    let data = Stage1Data::from_images(&images, &cfg.ablation, &cfg.proxy)?;
    train_stage1_proxy(&data, &cfg.train_config(Stage::Proxy), &cfg.network, &cfg.memory)
}

/// Stage 2 on the normal training images; `None` for self-reconstruction rows.
pub fn train_recon_stage(
    cfg: &ExperimentConfig,
    train: &[LabeledSample],
    pem: &ProxyExtractionModule,
) -> Result<Option<Stage2Outcome>> {
    if !cfg.ablation.use_si_proxy {
        return Ok(None);
    }
    let normals = normal_images(train)?;
    let ids: Vec<String> = normals.iter().map(|s| s.id.clone()).collect();
    let images: Vec<_> = normals.iter().map(|s| s.image.clone()).collect();
    let tc = cfg.train_config(Stage::Recon);
    let data = Stage2Data::prepare(&ids, &images, pem, &tc, &cfg.proxy)?;
    train_stage2_recon(&data, pem, &tc, &cfg.network, &cfg.memory).map(Some)
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub model: AnomalyModel,
    pub discriminator: Option<Discriminator>,
    pub proxy_log: Vec<EpochRecord>,
    pub recon_log: Vec<EpochRecord>,
}

pub fn train_model(cfg: &ExperimentConfig, train: &[LabeledSample]) -> Result<TrainedModel> {
    let s1 = train_proxy_stage(cfg, train)?;
    let s2 = train_recon_stage(cfg, train, &s1.module)?;
    let (irm, disc, recon_log) = match s2 {
        Some(o) => (Some(o.module), Some(o.discriminator), o.log),
        None => (None, None, Vec::new()),
    };
    Ok(TrainedModel {
        model: AnomalyModel::new(cfg.ablation, cfg.proxy.clone(), s1.module, irm)?,
        discriminator: disc,
        proxy_log: s1.log,
        recon_log,
    })
}

/// Metrics of every score column of one scored test set.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub tag: String,
    pub row: Option<u8>,
    /// Scorer selected by the ablation flags.
    pub primary_scorer: &'static str,
    pub primary: MetricsReport,
    pub latent: MetricsReport,
    pub pixelspace: MetricsReport,
    pub si_error: MetricsReport,
    pub pixel: Option<PixelMetrics>,
}

pub fn evaluate_run(ablation: &AblationConfig, records: &[AnomalyRecord], threshold: f64) -> Result<Evaluation> {
    let primary_scorer = if ablation.score_in_latent { LATENT } else { PIXEL };
    Ok(Evaluation {
        tag: ablation.tag(),
        row: ablation.row_number(),
        primary_scorer,
        primary: evaluate_records(records, primary_scorer, threshold)?,
        latent: evaluate_records(records, LATENT, threshold)?,
        pixelspace: evaluate_records(records, PIXEL, threshold)?,
        si_error: evaluate_records(records, SI_ERROR, threshold)?,
        pixel: evaluate_pixels(records, threshold)?,
    })
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub trained: TrainedModel,
    pub records: Vec<AnomalyRecord>,
    pub evaluation: Evaluation,
}

pub fn run_pipeline(cfg: &ExperimentConfig, data: &Dataset) -> Result<RunResult> {
    let trained = train_model(cfg, &data.train)?;
    let records = score_dataset(&trained.model, &data.test)?;
    let evaluation = evaluate_run(&cfg.ablation, &records, cfg.output.threshold)?;
    log::info!(
        "{}: auc {:.4} ({}), latent {:.4}, pixel {:.4}",
        evaluation.tag,
        evaluation.primary.auc,
        evaluation.primary_scorer,
        evaluation.latent.auc,
        evaluation.pixelspace.auc
    );
    Ok(RunResult {
        trained,
        records,
        evaluation,
    })
}

/// Runs each ladder row with every other setting shared.
pub fn run_ablation(cfg: &ExperimentConfig, data: &Dataset, rows: &[u8]) -> Result<Vec<RunResult>> {
    rows.iter()
        .map(|&r| {
            let mut c = cfg.clone();
            let mode = c.ablation.proxy_mode;
            c.ablation = AblationConfig::row(r)?;
            c.ablation.proxy_mode = mode;
            run_pipeline(&c, data)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    MemorySize,
    LambdaGlobal,
    LambdaLocal,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            Self::MemorySize => "memory_size",
            Self::LambdaGlobal => "lambda_global",
            Self::LambdaLocal => "lambda_local",
        }
    }

    /// `cfg` with this parameter set to `value`.
    pub fn apply(self, cfg: &ExperimentConfig, value: f64) -> Result<ExperimentConfig> {
        let mut c = cfg.clone();
        match self {
            Self::MemorySize => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    return Err(Error::arg(format!("memory size must be a positive integer, got {value}")));
                }
                c.memory.size = value as usize;
            }
            Self::LambdaGlobal => c.loss.lambda_global = value,
            Self::LambdaLocal => c.loss.lambda_local = value,
        }
        c.validate()?;
        Ok(c)
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "memory_size" => Ok(Self::MemorySize),
            "lambda_global" => Ok(Self::LambdaGlobal),
            "lambda_local" => Ok(Self::LambdaLocal),
            _ => Err(Error::arg(format!(
                "unknown sweep parameter '{s}' (expected memory_size|lambda_global|lambda_local)"
            ))),
        }
    }
}

pub fn run_sweep(
    cfg: &ExperimentConfig,
    data: &Dataset,
    param: SweepParam,
    values: &[f64],
) -> Result<Vec<(f64, RunResult)>> {
    values
        .iter()
        .map(|&v| Ok((v, run_pipeline(&param.apply(cfg, v)?, data)?)))
        .collect()
}

/// One row of `scores.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub id: String,
    pub label: Label,
    pub a_img: f64,
    pub a_img_pixelspace: f64,
    pub a_si_error: f64,
}

impl ScoreRow {
    pub fn score(&self, scorer: &str) -> Result<f64> {
        match scorer {
            LATENT => Ok(self.a_img),
            PIXEL => Ok(self.a_img_pixelspace),
            SI_ERROR => Ok(self.a_si_error),
            _ => Err(Error::arg(format!("unknown scorer '{scorer}'"))),
        }
    }
}

impl From<&AnomalyRecord> for ScoreRow {
    fn from(r: &AnomalyRecord) -> Self {
        Self {
            id: r.id.clone(),
            label: r.label,
            a_img: r.a_img,
            a_img_pixelspace: r.a_img_pixelspace,
            a_si_error: r.a_si_error,
        }
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Dataset(format!("{}: {e}", path.display()))
}

/// Writes `id,label,a_img,a_img_pixelspace,a_si_error` rows.
pub fn write_scores_csv(path: &Path, records: &[AnomalyRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in records {
        w.serialize(ScoreRow::from(r)).map_err(|e| csv_error(path, e))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scores_csv(path: &Path) -> Result<Vec<ScoreRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

/// Metrics of a parsed score file.
pub fn evaluate_score_rows(rows: &[ScoreRow], scorer: &str, threshold: f64) -> Result<MetricsReport> {
    let scores = rows.iter().map(|r| r.score(scorer)).collect::<Result<Vec<_>>>()?;
    let labels: Vec<Label> = rows.iter().map(|r| r.label).collect();
    crate::scoring::evaluate(&scores, &labels, threshold)
}

/// `key = value` artifact manifest.
pub fn manifest(cfg: &ExperimentConfig, entries: &[(&str, String)]) -> String {
    let mut s = String::new();
    writeln!(s, "config_hash = {}", cfg.hash()).unwrap();
    writeln!(s, "seed = {}", cfg.train.seed).unwrap();
    writeln!(s, "ablation = {}", cfg.ablation.tag()).unwrap();
    for (k, v) in entries {
        writeln!(s, "{k} = {v}").unwrap();
    }
    s
}

fn checkpoint_meta(cfg: &ExperimentConfig) -> Metadata {
    let mut m = Metadata::new();
    m.insert("config_hash".into(), cfg.hash());
    m.insert("ablation".into(), cfg.ablation.tag());
    m.insert("proxy_mode".into(), cfg.ablation.proxy_mode.name().into());
    m.insert("seed".into(), cfg.train.seed.to_string());
    m
}

pub fn save_proxy_checkpoint(path: &Path, cfg: &ExperimentConfig, pem: &ProxyExtractionModule) -> Result<()> {
    save_proxy_module(path, pem, &checkpoint_meta(cfg))
}

pub fn save_recon_checkpoint(path: &Path, cfg: &ExperimentConfig, outcome: &Stage2Outcome) -> Result<()> {
    save_recon_module(path, &outcome.module, &outcome.discriminator, &checkpoint_meta(cfg))
}

fn check_meta(path: &Path, meta: &Metadata, cfg: &ExperimentConfig) -> Result<()> {
    let tag = cfg.ablation.tag();
    match meta.get("ablation") {
        Some(t) if *t == tag => Ok(()),
        Some(t) => Err(Error::Config(format!(
            "{} was trained as {t}, but the configuration is {tag}",
            path.display()
        ))),
        None => Ok(()),
    }
}

pub fn load_proxy_checkpoint(path: &Path, cfg: &ExperimentConfig) -> Result<ProxyExtractionModule> {
    let (pem, meta) = load_proxy_module(path)?;
    check_meta(path, &meta, cfg)?;
    Ok(pem)
}

/// Assembles a scoring model from checkpoints; the reconstruction checkpoint
/// is required exactly when the proxy bridge is enabled.
pub fn load_model(cfg: &ExperimentConfig, proxy_ckpt: &Path, recon_ckpt: Option<&Path>) -> Result<AnomalyModel> {
    let pem = load_proxy_checkpoint(proxy_ckpt, cfg)?;
    let irm = match (cfg.ablation.use_si_proxy, recon_ckpt) {
        (true, Some(p)) => {
            let (irm, _, meta) = load_recon_module(p)?;
            check_meta(p, &meta, cfg)?;
            Some(irm)
        }
        (true, None) => {
            return Err(Error::Untrained("a reconstruction checkpoint is required".into()))
        }
        (false, _) => None,
    };
    AnomalyModel::new(cfg.ablation, cfg.proxy.clone(), pem, irm)
}

/// Plain-text and `key = value` renderings of an evaluation.
pub fn format_evaluation(e: &Evaluation) -> (String, String) {
    let mut text = String::new();
    writeln!(text, "model: {}{}", e.tag, e.row.map(|r| format!(" (row {r})")).unwrap_or_default()).unwrap();
    writeln!(
        text,
        "image-level ({}): AUC {:.4}  ACC {:.4}  F1 {:.4}  gap {:.4} (normal {:.4}, abnormal {:.4})",
        e.primary_scorer,
        e.primary.auc,
        e.primary.acc,
        e.primary.f1,
        e.primary.gap.gap,
        e.primary.gap.mean_normal,
        e.primary.gap.mean_abnormal
    )
    .unwrap();
    for (name, m) in [(LATENT, &e.latent), (PIXEL, &e.pixelspace), (SI_ERROR, &e.si_error)] {
        writeln!(text, "  {name:<8} AUC {:.4}  gap {:.4}", m.auc, m.gap.gap).unwrap();
    }
    if let Some(p) = &e.pixel {
        writeln!(text, "pixel-level: pooled AUC {:.4}  ACC {:.4}  F1 {:.4}", p.pooled_auc, p.acc, p.f1).unwrap();
    }
    writeln!(text, "threshold {} on min-max normalised scores", e.primary.threshold).unwrap();

    let mut kv = String::new();
    writeln!(kv, "ablation = {}", e.tag).unwrap();
    writeln!(kv, "row = {}", e.row.map(|r| r.to_string()).unwrap_or_default()).unwrap();
    writeln!(kv, "scorer = {}", e.primary_scorer).unwrap();
    writeln!(kv, "threshold = {}", e.primary.threshold).unwrap();
    writeln!(kv, "n_normal = {}", e.primary.n_normal).unwrap();
    writeln!(kv, "n_abnormal = {}", e.primary.n_abnormal).unwrap();
    for (prefix, m) in [("", &e.primary), ("latent.", &e.latent), ("pixelspace.", &e.pixelspace), ("si_error.", &e.si_error)] {
        writeln!(kv, "{prefix}auc = {}", m.auc).unwrap();
        writeln!(kv, "{prefix}acc = {}", m.acc).unwrap();
        writeln!(kv, "{prefix}f1 = {}", m.f1).unwrap();
        writeln!(kv, "{prefix}gap = {}", m.gap.gap).unwrap();
        writeln!(kv, "{prefix}gap_mean_normal = {}", m.gap.mean_normal).unwrap();
        writeln!(kv, "{prefix}gap_mean_abnormal = {}", m.gap.mean_abnormal).unwrap();
    }
    if let Some(p) = &e.pixel {
        writeln!(kv, "pixel.pooled_auc = {}", p.pooled_auc).unwrap();
        if let Some(a) = p.mean_image_auc {
            writeln!(kv, "pixel.mean_image_auc = {a}").unwrap();
        }
        writeln!(kv, "pixel.acc = {}", p.acc).unwrap();
        writeln!(kv, "pixel.f1 = {}", p.f1).unwrap();
    }
    (text, kv)
}
