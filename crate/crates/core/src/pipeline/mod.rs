//! File-based pipeline behind the command-line tool: prepare, train,
//! sample, evaluate and sweep, each reading the previous stage's
//! artifacts from the output directory.

mod config;

pub use config::{
    set_dotted, CodecConfig, CodecMode, EvaluationConfig, Paths, RunConfig, SamplingConfig, ScheduleConfig,
    SweepConfig, MIN_TIMESTEPS,
};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::conditioning::{balance, dataset_conditions, draw_conditions, empirical_joint, BalancingLevel, ConditionTable};
use crate::data::{load_dataset, split_dataset, Dataset, SchemaSpec, SplitIndices, TabularEncoder};
use crate::denoiser::{self, Checkpoint, ConditionCards, ConditionSpec, Denoiser, LatentCodec, TrainedModel, TrainingData};
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::eval::{self, sweep_csv, sweep_svg, tradeoff_sweep, EvalInputs, FairnessReport, SweepRow};
use crate::guidance::reverse_sample;
use crate::io;

pub const MANIFEST_MAGIC: &str = "FAIRDIFF-MANIFEST";
pub const MANIFEST_VERSION: u32 = 1;
/// Prefix of the provenance columns appended to sampled tables.
pub const COND_PREFIX: &str = "cond_";

/// Output of `prepare`: everything later stages need to interpret data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub magic: String,
    pub version: u32,
    /// Hash of the inputs and settings that produced this manifest.
    pub manifest_id: String,
    pub source_rows: usize,
    pub dropped_rows: usize,
    pub encoder: TabularEncoder,
    pub split: SplitIndices,
    /// Empirical label / sensitive-combination table of the train split.
    pub condition_table: ConditionTable,
}

/// Sidecar written next to every sampled CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub config_hash: String,
    pub manifest_id: String,
    pub checkpoint_hash: String,
    pub seed: u64,
    pub level: u8,
    pub n_rows: usize,
}

/// Artifact locations inside the output directory.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub dir: PathBuf,
}

impl Artifacts {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Artifacts { dir: dir.into() }
    }
    pub fn manifest(&self) -> PathBuf {
        self.dir.join("manifest.json")
    }
    pub fn split(&self, name: &str) -> PathBuf {
        self.dir.join(format!("{name}.csv"))
    }
    pub fn encoded_train(&self) -> PathBuf {
        self.dir.join("train.encoded.csv")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.dir.join("checkpoint.json")
    }
    pub fn loss_curve(&self) -> PathBuf {
        self.dir.join("loss_curve.csv")
    }
    pub fn synthetic(&self) -> PathBuf {
        self.dir.join("synthetic.csv")
    }
    pub fn report(&self) -> PathBuf {
        self.dir.join("report.json")
    }
    pub fn sweep_csv(&self) -> PathBuf {
        self.dir.join("sweep.csv")
    }
    pub fn sweep_svg(&self) -> PathBuf {
        self.dir.join("sweep.svg")
    }
}

/// Sidecar for the CSV artifacts other than sampled tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub config_hash: String,
    pub manifest_id: String,
}

fn write_sidecar(csv: &Path, config_hash: &str, manifest_id: &str) -> Result<()> {
    io::write_json_atomic(
        &meta_path(csv),
        &ArtifactMeta {
            config_hash: config_hash.into(),
            manifest_id: manifest_id.into(),
        },
    )
}

pub fn meta_path(csv: &Path) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Per-stage config hashes. Each covers its own settings plus the hash of
/// the stage it consumes, so a change upstream invalidates everything
/// downstream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageHashes {
    pub prepare: String,
    pub train: String,
    pub sample: String,
    pub evaluate: String,
}

impl StageHashes {
    pub fn compute(cfg: &RunConfig) -> Result<Self> {
        let data = std::fs::read(&cfg.paths.data)
            .map_err(|e| Error::Config(format!("paths.data {}: {e}", cfg.paths.data.display())))?;
        let schema = SchemaSpec::load(&cfg.paths.schema)?;
        let prepare = io::hash_json(&json!({
            "data_sha256": hex::encode(Sha256::digest(&data)),
            "schema": schema,
            "seed": cfg.seed,
            "constant_passthrough": cfg.constant_passthrough,
        }))?;
        let train = io::hash_json(&json!({
            "prepare": prepare,
            "schedule": cfg.schedule,
            "denoiser": train_config(cfg),
            "codec": cfg.codec,
        }))?;
        let sample = io::hash_json(&json!({
            "train": train,
            "guidance": cfg.guidance,
            "sampling": cfg.sampling,
        }))?;
        let evaluate = io::hash_json(&json!({
            "sample": sample,
            "evaluation": cfg.evaluation,
        }))?;
        Ok(StageHashes {
            prepare,
            train,
            sample,
            evaluate,
        })
    }
}

/// The denoiser settings actually trained with: the run seed replaces
/// `denoiser.seed`.
fn train_config(cfg: &RunConfig) -> denoiser::DenoiserConfig {
    denoiser::DenoiserConfig {
        seed: cfg.seed,
        ..cfg.denoiser.clone()
    }
}

fn write_csv_atomic(path: &Path, ds: &Dataset, extra: &[(String, Vec<String>)]) -> Result<()> {
    let mut buf = Vec::new();
    ds.write_csv(&mut buf, extra)?;
    io::write_atomic(path, &buf)
}

fn encoded_csv(enc: &TabularEncoder, ds: &Dataset) -> Result<Vec<u8>> {
    let batch = enc.encode(ds)?;
    let schema = enc.schema();
    let mut header: Vec<String> = schema
        .numerical_indices()
        .iter()
        .map(|&c| schema.columns[c].name.clone())
        .collect();
    for c in schema.categorical_indices() {
        let col = &schema.columns[c];
        header.extend(col.values().unwrap().iter().map(|v| format!("{}={v}", col.name)));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header)?;
    for r in 0..batch.rows() {
        w.write_record(batch.row(r).iter().map(|x| x.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Loads the data, splits it, fits the encoder on the train split and
/// writes the manifest, the three split CSVs and the encoded train rows.
pub fn prepare(cfg: &RunConfig) -> Result<Manifest> {
    cfg.check_inputs()?;
    let hashes = StageHashes::compute(cfg)?;
    let spec = SchemaSpec::load(&cfg.paths.schema)?;
    let data = load_dataset(&cfg.paths.data, &spec)?;
    if data.dropped_rows > 0 {
        warn!("dropped {} rows with missing cells", data.dropped_rows);
    }
    let split = split_dataset(&data, cfg.seed)?;
    let encoder = TabularEncoder::fit(&split.train, cfg.constant_passthrough)?;
    let condition_table = empirical_joint(&split.train)?;
    let manifest = Manifest {
        magic: MANIFEST_MAGIC.into(),
        version: MANIFEST_VERSION,
        manifest_id: hashes.prepare,
        source_rows: data.n_rows() + data.dropped_rows,
        dropped_rows: data.dropped_rows,
        encoder,
        split: split.indices.clone(),
        condition_table,
    };
    let art = Artifacts::new(&cfg.paths.out);
    std::fs::create_dir_all(&art.dir)?;
    write_csv_atomic(&art.split("train"), &split.train, &[])?;
    write_csv_atomic(&art.split("validation"), &split.validation, &[])?;
    write_csv_atomic(&art.split("test"), &split.test, &[])?;
    io::write_atomic(&art.encoded_train(), &encoded_csv(&manifest.encoder, &split.train)?)?;
    io::write_json_atomic(&art.manifest(), &manifest)?;
    info!(
        "prepared {} rows: train {}, validation {}, test {}",
        data.n_rows(),
        split.train.n_rows(),
        split.validation.n_rows(),
        split.test.n_rows()
    );
    Ok(manifest)
}

/// Reads the manifest and checks it was produced from the current inputs.
pub fn load_manifest(cfg: &RunConfig) -> Result<Manifest> {
    let art = Artifacts::new(&cfg.paths.out);
    let m: Manifest = io::read_json(&art.manifest())
        .map_err(|e| Error::Mismatch(format!("cannot read manifest {}: {e}", art.manifest().display())))?;
    if m.magic != MANIFEST_MAGIC || m.version != MANIFEST_VERSION {
        return Err(Error::Mismatch(format!("{} is not a version {MANIFEST_VERSION} manifest", art.manifest().display())));
    }
    let expected = StageHashes::compute(cfg)?.prepare;
    if m.manifest_id != expected {
        return Err(Error::Mismatch(format!(
            "manifest {} was prepared from different data or settings; rerun prepare",
            m.manifest_id
        )));
    }
    Ok(m)
}

pub fn load_split(cfg: &RunConfig, manifest: &Manifest, name: &str) -> Result<Dataset> {
    let spec = manifest.encoder.schema().spec();
    let ds = load_dataset(&Artifacts::new(&cfg.paths.out).split(name), &spec)?;
    if ds.schema() != manifest.encoder.schema() {
        return Err(Error::Mismatch(format!("{name}.csv does not match the manifest schema")));
    }
    Ok(ds)
}

fn condition_cards(enc: &TabularEncoder) -> ConditionCards {
    ConditionCards {
        label: enc.schema().target_cardinality(),
        sensitive: enc.schema().sensitive_cardinalities(),
    }
}

/// Trains the denoiser on the prepared train split and writes the
/// checkpoint and the per-epoch loss curve.
pub fn train_model(cfg: &RunConfig) -> Result<Checkpoint> {
    let manifest = load_manifest(cfg)?;
    let hashes = StageHashes::compute(cfg)?;
    let train = load_split(cfg, &manifest, "train")?;
    let x0 = manifest.encoder.encode(&train)?;
    let codec = match cfg.codec.mode {
        CodecMode::Identity => LatentCodec::Identity,
        CodecMode::Linear => LatentCodec::fit_linear(&x0, cfg.codec.latent_dim.unwrap(), cfg.codec.max_mse)?,
    };
    let z0 = codec.encode(&x0)?;
    let conditions = dataset_conditions(&train);
    let schedule = NoiseSchedule::new(cfg.schedule.kind, cfg.schedule.timesteps)?;
    let mut model = Denoiser::new(train_config(cfg), z0.layout().clone(), condition_cards(&manifest.encoder))?;
    let epochs = cfg.denoiser.epochs;
    let losses = denoiser::train(
        &mut model,
        &TrainingData {
            x0: &z0,
            conditions: &conditions,
        },
        &schedule,
        |epoch, loss| {
            if epoch + 1 == epochs || (epoch + 1) % 10 == 0 {
                info!("epoch {}/{epochs}: loss {loss:.6}", epoch + 1);
            }
        },
    )?;
    let trained = TrainedModel {
        model,
        codec,
        data_layout: x0.layout().clone(),
        schedule,
    };
    let ckpt = Checkpoint::new(&trained, &hashes.train, &manifest.manifest_id)?;
    let art = Artifacts::new(&cfg.paths.out);
    let mut curve = String::from("epoch,loss\n");
    for (i, l) in losses.iter().enumerate() {
        writeln!(curve, "{},{l}", i + 1).unwrap();
    }
    io::write_atomic(&art.loss_curve(), curve.as_bytes())?;
    write_sidecar(&art.loss_curve(), &hashes.train, &manifest.manifest_id)?;
    ckpt.save(&art.checkpoint())?;
    Ok(ckpt)
}

/// Loads the checkpoint and checks it belongs to this manifest and to the
/// current training settings.
pub fn load_checkpoint(cfg: &RunConfig, manifest: &Manifest) -> Result<(Checkpoint, TrainedModel)> {
    let path = Artifacts::new(&cfg.paths.out).checkpoint();
    let ckpt = Checkpoint::load(&path)
        .map_err(|e| Error::Mismatch(format!("cannot read checkpoint {}: {e}", path.display())))?;
    if ckpt.manifest_id != manifest.manifest_id {
        return Err(Error::Mismatch(format!(
            "checkpoint was trained on manifest {}, not {}",
            ckpt.manifest_id, manifest.manifest_id
        )));
    }
    let expected = StageHashes::compute(cfg)?.train;
    if ckpt.config_hash != expected {
        return Err(Error::Mismatch("checkpoint was trained with different settings; rerun train".into()));
    }
    let model = ckpt.clone().into_model()?;
    Ok((ckpt, model))
}

fn provenance(enc: &TabularEncoder, conds: &[ConditionSpec]) -> Vec<(String, Vec<String>)> {
    let schema = enc.schema();
    let label_col = &schema.columns[schema.target_index()];
    let mut out = vec![(
        format!("{COND_PREFIX}{}", label_col.name),
        conds
            .iter()
            .map(|c| label_col.values().unwrap()[c.label.unwrap() as usize].clone())
            .collect(),
    )];
    for (i, col) in schema.sensitive_indices().into_iter().enumerate() {
        let col = &schema.columns[col];
        out.push((
            format!("{COND_PREFIX}{}", col.name),
            conds
                .iter()
                .map(|c| col.values().unwrap()[c.sensitive[i].unwrap() as usize].clone())
                .collect(),
        ));
    }
    out
}

/// Draws conditions at `level` and runs the guided sampler.
fn generate(
    manifest: &Manifest,
    trained: &TrainedModel,
    cfg: &RunConfig,
    level: BalancingLevel,
    n: usize,
    seed: u64,
    jobs: usize,
) -> Result<(Dataset, Vec<ConditionSpec>)> {
    let table = balance(&manifest.condition_table, level);
    let conds = draw_conditions(n, &table, seed);
    let z = reverse_sample(trained, &conds, &cfg.guidance, seed, jobs)?;
    let ds = manifest.encoder.decode(&z)?;
    Ok((ds, conds))
}

fn sample_count(cfg: &RunConfig, manifest: &Manifest) -> usize {
    cfg.sampling.n_samples.unwrap_or(manifest.split.train.len())
}

/// Samples a synthetic table at the configured level and writes it with
/// `cond_*` provenance columns plus a metadata sidecar.
pub fn sample(cfg: &RunConfig) -> Result<PathBuf> {
    let manifest = load_manifest(cfg)?;
    let (ckpt, trained) = load_checkpoint(cfg, &manifest)?;
    let hashes = StageHashes::compute(cfg)?;
    let n = sample_count(cfg, &manifest);
    let level = cfg.sampling.level;
    let (ds, conds) = generate(&manifest, &trained, cfg, level, n, cfg.seed, cfg.jobs())?;
    let art = Artifacts::new(&cfg.paths.out);
    let path = art.synthetic();
    write_csv_atomic(&path, &ds, &provenance(&manifest.encoder, &conds))?;
    let meta = SampleMeta {
        config_hash: hashes.sample,
        manifest_id: manifest.manifest_id,
        checkpoint_hash: ckpt.config_hash,
        seed: cfg.seed,
        level: level.get(),
        n_rows: n,
    };
    io::write_json_atomic(&meta_path(&path), &meta)?;
    info!("sampled {n} rows at level {}", level.get());
    Ok(path)
}

fn fairness_attribute(cfg: &RunConfig, enc: &TabularEncoder) -> Result<String> {
    match &cfg.evaluation.fairness_attribute {
        Some(a) => Ok(a.clone()),
        None => enc
            .schema()
            .sensitive
            .first()
            .cloned()
            .ok_or_else(|| Error::Config("fairness metrics need a sensitive column".into())),
    }
}

/// Scores a synthetic CSV (default: the sampled one) against the real
/// splits and writes `report.json`.
pub fn evaluate(cfg: &RunConfig, synthetic: Option<&Path>) -> Result<FairnessReport> {
    let manifest = load_manifest(cfg)?;
    let hashes = StageHashes::compute(cfg)?;
    let art = Artifacts::new(&cfg.paths.out);
    let ckpt_path = art.checkpoint();
    if ckpt_path.exists() {
        let ckpt = Checkpoint::load(&ckpt_path)?;
        if ckpt.manifest_id != manifest.manifest_id {
            return Err(Error::Mismatch(format!(
                "checkpoint was trained on manifest {}, not {}",
                ckpt.manifest_id, manifest.manifest_id
            )));
        }
    }
    let synth_path = synthetic.map(Path::to_path_buf).unwrap_or_else(|| art.synthetic());
    let meta: Option<SampleMeta> = match meta_path(&synth_path) {
        p if p.exists() => Some(io::read_json(&p)?),
        _ => {
            warn!("{} has no metadata sidecar; provenance unchecked", synth_path.display());
            None
        }
    };
    if let Some(m) = &meta {
        if m.manifest_id != manifest.manifest_id {
            return Err(Error::Mismatch(format!(
                "synthetic table was sampled under manifest {}, not {}",
                m.manifest_id, manifest.manifest_id
            )));
        }
    }
    let spec = manifest.encoder.schema().spec();
    let synth = load_dataset(&synth_path, &spec)?;
    let train = load_split(cfg, &manifest, "train")?;
    let test = load_split(cfg, &manifest, "test")?;
    let attr = fairness_attribute(cfg, &manifest.encoder)?;
    let seed = meta.as_ref().map_or(cfg.seed, |m| m.seed);
    let mut report = eval::evaluate(&EvalInputs {
        encoder: &manifest.encoder,
        train: &train,
        test: &test,
        synthetic: &synth,
        classifier: cfg.evaluation.classifier,
        weights: cfg.evaluation.weights,
        fairness_attribute: &attr,
        seed,
    })?;
    report.metadata.level = meta.as_ref().map(|m| m.level);
    report.metadata.config_hash = hashes.evaluate;
    io::write_json_atomic(&art.report(), &report)?;
    Ok(report)
}

/// Samples and evaluates every configured (level, seed) pair and writes
/// the averaged rows as CSV, plus an SVG chart when enabled.
pub fn sweep(cfg: &RunConfig) -> Result<Vec<SweepRow>> {
    let manifest = load_manifest(cfg)?;
    let (_, trained) = load_checkpoint(cfg, &manifest)?;
    let train = load_split(cfg, &manifest, "train")?;
    let test = load_split(cfg, &manifest, "test")?;
    let attr = fairness_attribute(cfg, &manifest.encoder)?;
    let hash = StageHashes::compute(cfg)?.evaluate;
    let n = sample_count(cfg, &manifest);
    let rows = tradeoff_sweep(
        &cfg.sweep.levels,
        &cfg.sweep.seeds,
        &cfg.evaluation.weights,
        cfg.jobs(),
        |level, seed| {
            let (synth, _) = generate(&manifest, &trained, cfg, level, n, seed, 1)?;
            let mut r = eval::evaluate(&EvalInputs {
                encoder: &manifest.encoder,
                train: &train,
                test: &test,
                synthetic: &synth,
                classifier: cfg.evaluation.classifier,
                weights: cfg.evaluation.weights,
                fairness_attribute: &attr,
                seed,
            })?;
            r.metadata.level = Some(level.get());
            r.metadata.config_hash = hash.clone();
            info!("level {} seed {seed}: auc {:.4} dpr {:.4} eor {:.4}", level.get(), r.auc, r.dpr, r.eor);
            Ok(r)
        },
    )?;
    let art = Artifacts::new(&cfg.paths.out);
    io::write_atomic(&art.sweep_csv(), sweep_csv(&rows).as_bytes())?;
    write_sidecar(&art.sweep_csv(), &hash, &manifest.manifest_id)?;
    if cfg.sweep.svg {
        io::write_atomic(&art.sweep_svg(), sweep_svg(&rows).as_bytes())?;
    }
    Ok(rows)
}
