//! Model files for the `train` and `predict` workflows.
//!
//! A model is a JSON document holding the feature normalizer and a forest
//! checkpoint. The training samples (already normalized) live next to it in
//! `<model>.samples.csv` so training can resume.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use mondrian_forest::data::{load_csv, read_features, Normalizer, Sample, SampleStream};
use mondrian_forest::{Forest, ForestCheckpoint, ScheduleSpec, Task, VoteRule};
use serde::{Deserialize, Serialize};

pub const MODEL_SCHEMA: &str = "mondrian-forest/model/v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema: String,
    pub normalizer: Normalizer,
    pub forest: ForestCheckpoint,
}

pub fn samples_path(model: &Path) -> PathBuf {
    let mut name = model.as_os_str().to_owned();
    name.push(".samples.csv");
    PathBuf::from(name)
}

impl ModelFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("read {}", path.display()))?;
        let model: ModelFile =
            serde_json::from_str(&text).with_context(|| format!("parse {}", path.display()))?;
        ensure!(
            model.schema == MODEL_SCHEMA,
            "unsupported model schema {:?}",
            model.schema
        );
        Ok(model)
    }

    /// Restores a forest that can keep training from the sample file.
    pub fn resume(path: &Path) -> Result<(Self, Forest)> {
        let model = Self::load(path)?;
        let samples = samples_path(path);
        let stream = load_csv(&samples, true, None, model.forest.task)
            .with_context(|| format!("read {}", samples.display()))?;
        let forest = Forest::from_checkpoint(model.forest.clone(), Some(stream.to_buffer()))?;
        Ok((model, forest))
    }

    /// Restores a prediction-only forest.
    pub fn frozen(&self) -> Result<Forest> {
        Ok(Forest::from_checkpoint(self.forest.clone(), None)?)
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub dataset: PathBuf,
    pub header: bool,
    pub label_column: Option<usize>,
    pub task: Task,
    pub trees: usize,
    pub schedule: ScheduleSpec,
    pub seed: u64,
    /// Continue from this model instead of starting fresh.
    pub resume: Option<PathBuf>,
    pub out: PathBuf,
}

/// Trains online on every row of the dataset and writes the model and its
/// sample file. Returns a short JSON summary.
pub fn train(cfg: &TrainConfig) -> Result<serde_json::Value> {
    let data = load_csv(&cfg.dataset, cfg.header, cfg.label_column, cfg.task)?;
    let (normalizer, mut forest) = match &cfg.resume {
        Some(path) => {
            let (model, forest) = ModelFile::resume(path)?;
            ensure!(
                forest.task() == cfg.task,
                "model was trained for {}",
                forest.task().name()
            );
            (model.normalizer, forest)
        }
        None => {
            ensure!(!data.is_empty(), "empty training stream");
            let norm = Normalizer::fit(&data)?;
            let schedule = cfg.schedule.for_dimension(data.dimension)?;
            let forest = Forest::new(cfg.trees, schedule, data.dimension, cfg.task, cfg.seed)?;
            (norm, forest)
        }
    };
    ensure!(
        data.is_empty() || data.dimension == forest.dimension(),
        "dataset has {} features, model expects {}",
        data.dimension,
        forest.dimension()
    );
    let before = forest.n_seen();
    for s in &data.normalized(&normalizer).samples {
        forest.partial_fit(&s.x, s.y)?;
    }

    let model = ModelFile {
        schema: MODEL_SCHEMA.into(),
        normalizer,
        forest: forest.checkpoint(),
    };
    std::fs::write(&cfg.out, serde_json::to_string(&model)?)
        .with_context(|| format!("write {}", cfg.out.display()))?;
    let mut buffered = SampleStream::new(forest.task(), forest.dimension());
    buffered.samples = forest
        .buffer()
        .iter()
        .map(|(x, y)| Sample { x: x.to_vec(), y })
        .collect();
    let samples = samples_path(&cfg.out);
    buffered.write_csv(
        std::fs::File::create(&samples).with_context(|| format!("create {}", samples.display()))?,
    )?;

    Ok(serde_json::json!({
        "model": cfg.out,
        "samples": samples,
        "added": forest.n_seen() - before,
        "n_seen": forest.n_seen(),
        "lifetime": forest.lifetime(),
        "trees": forest.trees().len(),
    }))
}

/// Writes one prediction per feature row as CSV. Classification models
/// emit `proba,class`; regression models emit `prediction`.
pub fn predict<R: std::io::Read, W: Write>(
    model: &ModelFile,
    input: R,
    header: bool,
    rule: VoteRule,
    out: W,
) -> Result<usize> {
    let forest = model.frozen()?;
    let rows = read_features(input, header)?;
    let mut w = std::io::BufWriter::new(out);
    match forest.task() {
        Task::Classify => w.write_all(b"proba,class\n")?,
        Task::Regress => w.write_all(b"prediction\n")?,
    }
    for (i, row) in rows.iter().enumerate() {
        ensure!(
            row.len() == forest.dimension(),
            "row {}: {} features, model expects {}",
            i + 1,
            row.len(),
            forest.dimension()
        );
        let x = model.normalizer.apply(row);
        match forest.task() {
            Task::Classify => writeln!(
                w,
                "{},{}",
                forest.predict_proba(&x)?,
                forest.predict_class(&x, rule)?
            )?,
            Task::Regress => writeln!(w, "{}", forest.predict_regression(&x)?)?,
        }
    }
    w.flush()?;
    Ok(rows.len())
}
