//! The staged experiment: population -> canonical population -> PCA ->
//! flow -> generated networks -> evaluation -> report.
//!
//! Every stage reads its inputs from the run directory, writes its
//! artifacts plus a manifest recording input hashes, and is a pure function
//! of the configuration and those inputs.

mod manifest;
mod report;

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Axis};

pub use manifest::{sha256_file, sha256_hex, Manifest};
pub use report::{comparison_table, write_report, Report};

use crate::bn_recalib::recalibrate;
use crate::canon::canonicalize_population;
use crate::config::{BnHandling, CanonMethod, PcaMethod, RunConfig, Task};
use crate::data::{load_idx, load_iris, make_blobs, LabeledDataset};
use crate::flow::{load_flow, sample_with, save_flow, train_flow_with_history};
use crate::metrics::{distribution_distances, max_iou, mean_std, min_pairwise_l2, wrong_set, WrongSet};
use crate::nn::{evaluate, load_checkpoint, save_checkpoint, train_population, WeightCheckpoint};
use crate::par::Execution;
use crate::pca::{
    default_components, fit_dual, fit_incremental, fit_standard, load_pca, save_pca, DualOptions, PcaModel, RowSource,
};
use crate::{Error, Result};

pub const STAGES: [&str; 7] = [
    "make-population",
    "canonicalize",
    "fit-pca",
    "train-flow",
    "generate",
    "evaluate",
    "report",
];

const POPULATION: &str = "population";
const CANONICAL: &str = "canonical";
const PCA: &str = "pca";
const FLOW: &str = "flow";
const GENERATED: &str = "generated";
const EVALUATION: &str = "evaluation";
const MANIFEST: &str = "manifest.tsv";

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

/// Result of the evaluation stage.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationSummary {
    pub original_accuracy: Vec<f64>,
    pub generated_accuracy: Vec<f64>,
    /// Per generated network: max IoU of wrong sets against the originals.
    pub generated_max_iou: Vec<f64>,
    /// Per original network: max IoU against the other originals.
    pub original_max_iou: Vec<f64>,
    pub min_pairwise_l2_generated: Option<f64>,
    pub distances: Option<crate::metrics::Distances>,
}

/// Rows of a population held as checkpoint files, read on demand.
struct CheckpointRows {
    paths: Vec<PathBuf>,
    dim: usize,
}

impl RowSource for CheckpointRows {
    fn len(&self) -> usize {
        self.paths.len()
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn read_rows(&self, start: usize, count: usize) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((count, self.dim));
        for (r, p) in self.paths[start..start + count].iter().enumerate() {
            let flat = load_checkpoint(p)?.flatten();
            out.row_mut(r).assign(&Array1::from_iter(flat.into_iter().map(f64::from)));
        }
        Ok(out)
    }
}

pub struct Pipeline {
    cfg: RunConfig,
    root: PathBuf,
    exec: Execution,
}

impl Pipeline {
    pub fn new(cfg: RunConfig, root: impl Into<PathBuf>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            root: root.into(),
            exec: Execution::default(),
        })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, stage: &str) -> Result<PathBuf> {
        let d = self.root.join(stage);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        Ok(d)
    }

    fn upstream(&self, stage: &'static str, dir: &str) -> Result<Manifest> {
        let path = self.root.join(dir).join(MANIFEST);
        if !path.exists() {
            return Err(Error::MissingArtifact { stage, path });
        }
        Manifest::read(&path)
    }

    fn rel(&self, p: &Path) -> String {
        p.strip_prefix(&self.root).unwrap_or(p).to_string_lossy().into_owned()
    }

    fn config_hash(&self) -> String {
        sha256_hex(format!("{:?}", self.cfg).as_bytes())
    }

    /// Train and test splits of the configured task.
    pub fn dataset(&self) -> Result<(LabeledDataset, LabeledDataset)> {
        let d = &self.cfg.data;
        let (train, test) = match self.cfg.task {
            Task::Iris => load_iris(),
            Task::Blobs => make_blobs(d.blob_classes, d.blob_per_class, d.blob_dim, d.blob_spread, d.blob_seed)?,
            Task::Mnist => {
                let dir = d.mnist_dir.as_ref().expect("validated");
                let train = load_idx(
                    &dir.join("train-images-idx3-ubyte"),
                    &dir.join("train-labels-idx1-ubyte"),
                    d.train_limit,
                )?;
                let test = load_idx(
                    &dir.join("t10k-images-idx3-ubyte"),
                    &dir.join("t10k-labels-idx1-ubyte"),
                    d.test_limit,
                )?;
                (train, test)
            }
        };
        let arch = self.cfg.architecture()?;
        if train.dim() != arch.input_dim() || train.num_classes() > arch.output_dim() {
            return Err(Error::Config(format!(
                "architecture {:?} does not fit data with {} features and {} classes",
                arch.layer_dims(),
                train.dim(),
                train.num_classes()
            )));
        }
        Ok((train, test))
    }

    fn load_population(&self, stage: &'static str, dir: &str) -> Result<(Manifest, Vec<PathBuf>, Vec<WeightCheckpoint>)> {
        let m = self.upstream(stage, dir)?;
        let paths: Vec<PathBuf> = m.column("file")?.iter().map(|f| self.root.join(dir).join(f)).collect();
        let ckpts = paths.iter().map(|p| load_checkpoint(p)).collect::<Result<Vec<_>>>()?;
        Ok((m, paths, ckpts))
    }

    fn accuracies(&self, ckpts: &[WeightCheckpoint], test: &LabeledDataset) -> Result<Vec<crate::nn::Evaluation>> {
        crate::par::try_map_indexed(self.exec, ckpts.len(), |i| evaluate(&ckpts[i], test))
    }

    pub fn make_population(&self) -> Result<Vec<WeightCheckpoint>> {
        let (train, test) = self.dataset()?;
        let arch = self.cfg.architecture()?;
        let seeds = self.cfg.seeds();
        log::info!("training {} networks {:?}", seeds.len(), arch.layer_dims());
        let hyper = self.cfg.train_hyper(0)?;
        let pop = train_population(self.exec, &arch, &train, Some(&test), &hyper, &seeds)?;
        let dir = self.dir(POPULATION)?;
        let mut m = Manifest::new(POPULATION, &["file", "seed", "accuracy", "sha256"]);
        m.input("config", self.config_hash());
        for (i, c) in pop.iter().enumerate() {
            let name = format!("net_{i:04}.dwfc");
            let path = dir.join(&name);
            save_checkpoint(c, &path)?;
            m.row(vec![name, c.meta.seed.to_string(), fmt(c.meta.metric), sha256_file(&path)?]);
        }
        let (mean, std) = mean_std(&pop.iter().map(|c| c.meta.metric).collect::<Vec<_>>());
        m.fact("accuracy_mean", fmt(mean));
        m.fact("accuracy_std", fmt(std));
        m.write(&dir.join(MANIFEST))?;
        Ok(pop)
    }

    pub fn canonicalize(&self) -> Result<Vec<WeightCheckpoint>> {
        let (_, paths, pop) = self.load_population("canonicalize", POPULATION)?;
        let (_, test) = self.dataset()?;
        let c = &self.cfg.canonicalize;
        let aligned = match c.method {
            CanonMethod::Off => pop.clone(),
            CanonMethod::Transfusion if pop.first().is_some_and(|p| p.attention.is_none()) => {
                return Err(Error::Config("transfusion canonicalization needs an attention block".into()))
            }
            CanonMethod::Rebasin | CanonMethod::Transfusion => {
                canonicalize_population(self.exec, &pop, c.reference_index, c.max_iter)?
            }
        };
        let before = self.accuracies(&pop, &test)?;
        let after = self.accuracies(&aligned, &test)?;
        let dir = self.dir(CANONICAL)?;
        let mut m = Manifest::new(CANONICAL, &["file", "seed", "accuracy_before", "accuracy_after", "sha256"]);
        for p in &paths {
            m.input(self.rel(p), sha256_file(p)?);
        }
        m.fact("method", format!("{:?}", c.method).to_lowercase());
        m.fact("reference_index", c.reference_index);
        for (i, ck) in aligned.iter().enumerate() {
            let (b, a) = (before[i].accuracy, after[i].accuracy);
            if (a - b).abs() > 1e-6 {
                return Err(Error::Argument(format!("alignment changed the accuracy of network {i}: {b} -> {a}")));
            }
            let name = format!("net_{i:04}.dwfc");
            let path = dir.join(&name);
            save_checkpoint(ck, &path)?;
            m.row(vec![name, ck.meta.seed.to_string(), fmt(b), fmt(a), sha256_file(&path)?]);
        }
        m.write(&dir.join(MANIFEST))?;
        Ok(aligned)
    }

    fn flat_rows(ckpts: &[WeightCheckpoint]) -> Array2<f64> {
        let d = ckpts.first().map_or(0, |c| c.param_count());
        let mut x = Array2::zeros((ckpts.len(), d));
        for (mut row, c) in x.rows_mut().into_iter().zip(ckpts) {
            row.assign(&Array1::from_iter(c.flatten().into_iter().map(f64::from)));
        }
        x
    }

    pub fn fit_pca(&self) -> Result<Option<PcaModel>> {
        let up = self.upstream("fit-pca", CANONICAL)?;
        let paths: Vec<PathBuf> = up.column("file")?.iter().map(|f| self.root.join(CANONICAL).join(f)).collect();
        let dir = self.dir(PCA)?;
        let p = &self.cfg.pca;
        let mut m = Manifest::new(PCA, &["file", "sha256"]);
        for path in &paths {
            m.input(self.rel(path), sha256_file(path)?);
        }
        m.fact("method", format!("{:?}", p.method).to_lowercase());
        let model_path = dir.join("model.dwfp");
        if p.method == PcaMethod::Off {
            if model_path.exists() {
                std::fs::remove_file(&model_path).map_err(|e| Error::io(&model_path, e))?;
            }
            m.write(&dir.join(MANIFEST))?;
            return Ok(None);
        }
        let n = paths.len();
        let k = p.components.unwrap_or_else(|| default_components(n));
        let dim = self.cfg.architecture()?.param_count();
        let source = CheckpointRows { paths, dim };
        let model = match p.method {
            PcaMethod::Standard => fit_standard(&source.read_rows(0, n)?, k)?,
            PcaMethod::Incremental => {
                let blocks = (0..n)
                    .step_by(p.micro_batch)
                    .map(|s| source.read_rows(s, p.micro_batch.min(n - s)))
                    .collect::<Result<Vec<_>>>()?;
                fit_incremental(blocks, k)?
            }
            PcaMethod::Dual => {
                let opts = DualOptions {
                    micro_batch: p.micro_batch,
                    exact_eigen: p.exact_eigen,
                    seed: self.cfg.seed,
                    execution: self.exec,
                };
                fit_dual(&source, k, &opts)?
            }
            PcaMethod::Off => unreachable!(),
        };
        save_pca(&model, &model_path)?;
        m.fact("components", k);
        m.fact("explained_variance_ratio", fmt(model.explained_variance_ratio()));
        m.row(vec!["model.dwfp".into(), sha256_file(&model_path)?]);
        m.write(&dir.join(MANIFEST))?;
        Ok(Some(model))
    }

    fn pca_model(&self, stage: &'static str) -> Result<Option<PcaModel>> {
        let m = self.upstream(stage, PCA)?;
        if m.rows.is_empty() {
            return Ok(None);
        }
        load_pca(&self.root.join(PCA).join("model.dwfp")).map(Some)
    }

    /// Trains the flow; returns the per-iteration loss trace.
    pub fn train_flow(&self) -> Result<Vec<f64>> {
        let (_, paths, pop) = self.load_population("train-flow", CANONICAL)?;
        let pca = self.pca_model("train-flow")?;
        let mut x = Self::flat_rows(&pop);
        if let Some(model) = &pca {
            x = model.transform_rows(&x)?;
        }
        let cfg = self.cfg.flow_config(x.ncols())?;
        log::info!(
            "training flow on {} x {} (hidden {}, {} iterations)",
            x.nrows(),
            x.ncols(),
            cfg.hidden_dim,
            cfg.iterations
        );
        let out = train_flow_with_history(&x, None, &cfg, self.cfg.seed)?;
        let dir = self.dir(FLOW)?;
        let path = dir.join("model.dwff");
        save_flow(&out.model, &path)?;
        let mut m = Manifest::new(FLOW, &["iterations", "mean_loss"]);
        for p in &paths {
            m.input(self.rel(p), sha256_file(p)?);
        }
        if pca.is_some() {
            let p = self.root.join(PCA).join("model.dwfp");
            m.input(self.rel(&p), sha256_file(&p)?);
        }
        m.fact("model_sha256", sha256_file(&path)?);
        let window = (out.losses.len() / 30).max(1);
        for (i, chunk) in out.losses.chunks(window).enumerate() {
            let mean = chunk.iter().sum::<f64>() / chunk.len() as f64;
            m.row(vec![format!("{}-{}", i * window, i * window + chunk.len()), format!("{mean:.6e}")]);
        }
        m.write(&dir.join(MANIFEST))?;
        Ok(out.losses)
    }

    pub fn generate(&self) -> Result<Vec<WeightCheckpoint>> {
        let flow_path = self.root.join(FLOW).join("model.dwff");
        self.upstream("generate", FLOW)?;
        let flow = load_flow(&flow_path)?;
        let pca = self.pca_model("generate")?;
        let arch = self.cfg.architecture()?;
        let count = self.cfg.generate.count;
        let mut x = sample_with(self.exec, &flow, count, None, self.cfg.seed)?;
        if let Some(model) = &pca {
            x = model.inverse_transform_rows(&x)?;
        }
        let mut generated = Vec::with_capacity(count);
        for (i, row) in x.axis_iter(Axis(0)).enumerate() {
            let flat: Vec<f32> = row.iter().map(|&v| v as f32).collect();
            let mut c = WeightCheckpoint::unflatten(&flat, &arch)?;
            c.meta.seed = i as u64;
            generated.push(c);
        }
        if arch.has_bn() && count > 0 {
            generated = match self.cfg.generate.bn {
                BnHandling::Recalibrate => {
                    let (train, _) = self.dataset()?;
                    let calib = train.head(self.cfg.data.calibration_size.min(train.len()));
                    crate::par::try_map_indexed(self.exec, generated.len(), |i| {
                        recalibrate(&generated[i], &calib, 64).map(|(c, _)| c)
                    })?
                }
                BnHandling::Reference => {
                    let (_, _, pop) = self.load_population("generate", CANONICAL)?;
                    let reference = &pop[self.cfg.canonicalize.reference_index];
                    generated
                        .into_iter()
                        .map(|mut c| c.copy_bn_stats_from(reference).map(|_| c))
                        .collect::<Result<_>>()?
                }
            };
        }
        let dir = self.dir(GENERATED)?;
        for entry in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let p = entry.map_err(|e| Error::io(&dir, e))?.path();
            if p.extension().is_some_and(|e| e == "dwfc") {
                std::fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
            }
        }
        let mut m = Manifest::new(GENERATED, &["file", "index", "sha256"]);
        m.input(self.rel(&flow_path), sha256_file(&flow_path)?);
        m.fact("count", count);
        for (i, c) in generated.iter().enumerate() {
            let name = format!("gen_{i:04}.dwfc");
            let path = dir.join(&name);
            save_checkpoint(c, &path)?;
            m.row(vec![name, i.to_string(), sha256_file(&path)?]);
        }
        m.write(&dir.join(MANIFEST))?;
        Ok(generated)
    }

    pub fn evaluate(&self) -> Result<EvaluationSummary> {
        let (_, orig_paths, originals) = self.load_population("evaluate", CANONICAL)?;
        let (_, gen_paths, generated) = self.load_population("evaluate", GENERATED)?;
        let (_, test) = self.dataset()?;
        let orig_eval = self.accuracies(&originals, &test)?;
        let gen_eval = self.accuracies(&generated, &test)?;
        let wrong = |evals: &[crate::nn::Evaluation]| -> Result<Vec<WrongSet>> {
            evals.iter().map(|e| wrong_set(&e.predictions, test.labels())).collect()
        };
        let orig_wrong = wrong(&orig_eval)?;
        let gen_wrong = wrong(&gen_eval)?;
        let ev = &self.cfg.evaluate;
        let generated_max_iou = if ev.iou && !generated.is_empty() {
            max_iou(&gen_wrong, &orig_wrong, false)?.per_query
        } else {
            Vec::new()
        };
        let original_max_iou = if ev.iou && originals.len() >= 2 {
            max_iou(&orig_wrong, &orig_wrong, true)?.per_query
        } else {
            Vec::new()
        };
        let gen_rows = Self::flat_rows(&generated);
        let orig_rows = Self::flat_rows(&originals);
        let distances = if ev.distances && !generated.is_empty() {
            Some(distribution_distances(self.exec, &gen_rows, &orig_rows)?)
        } else {
            None
        };
        let summary = EvaluationSummary {
            original_accuracy: orig_eval.iter().map(|e| e.accuracy).collect(),
            generated_accuracy: gen_eval.iter().map(|e| e.accuracy).collect(),
            generated_max_iou,
            original_max_iou,
            min_pairwise_l2_generated: (generated.len() >= 2).then(|| min_pairwise_l2(&gen_rows)),
            distances,
        };
        let dir = self.dir(EVALUATION)?;
        let mut m = Manifest::new(EVALUATION, &["group", "index", "accuracy", "max_iou"]);
        for p in orig_paths.iter().chain(&gen_paths) {
            m.input(self.rel(p), sha256_file(p)?);
        }
        m.fact("canonicalize", format!("{:?}", self.cfg.canonicalize.method).to_lowercase());
        m.fact("flow_hidden_dim", self.cfg.flow_config(1)?.hidden_dim);
        if let Some(v) = summary.min_pairwise_l2_generated {
            m.fact("min_pairwise_l2_generated", format!("{v:.6e}"));
        }
        if let Some(d) = &summary.distances {
            for line in d.to_key_values().lines() {
                let (k, v) = line.split_once('=').unwrap();
                m.fact(k, format!("{:.6e}", v.parse::<f64>().unwrap()));
            }
        }
        let cell = |v: Option<&f64>| v.map_or_else(|| "nan".to_string(), |x| fmt(*x));
        for (i, a) in summary.original_accuracy.iter().enumerate() {
            m.row(vec!["original".into(), i.to_string(), fmt(*a), cell(summary.original_max_iou.get(i))]);
        }
        for (i, a) in summary.generated_accuracy.iter().enumerate() {
            m.row(vec!["generated".into(), i.to_string(), fmt(*a), cell(summary.generated_max_iou.get(i))]);
        }
        m.write(&dir.join(MANIFEST))?;
        Ok(summary)
    }

    pub fn report(&self, compare: Option<&Path>) -> Result<Report> {
        let m = self.upstream("report", EVALUATION)?;
        let other = compare
            .map(|dir| {
                let path = dir.join(EVALUATION).join(MANIFEST);
                if !path.exists() {
                    return Err(Error::MissingArtifact { stage: "report", path });
                }
                Manifest::read(&path)
            })
            .transpose()?;
        write_report(&self.root, &m, other.as_ref())
    }

    pub fn run_stage(&self, stage: &str) -> Result<()> {
        match stage {
            "make-population" => self.make_population().map(|_| ()),
            "canonicalize" => self.canonicalize().map(|_| ()),
            "fit-pca" => self.fit_pca().map(|_| ()),
            "train-flow" => self.train_flow().map(|_| ()),
            "generate" => self.generate().map(|_| ()),
            "evaluate" => self.evaluate().map(|_| ()),
            "report" => self.report(None).map(|_| ()),
            other => Err(Error::Argument(format!("unknown stage `{other}`"))),
        }
    }

    /// All stages in order.
    pub fn run_all(&self) -> Result<Report> {
        for stage in &STAGES[..STAGES.len() - 1] {
            log::info!("stage {stage}");
            self.run_stage(stage)?;
        }
        self.report(None)
    }
}
