//! Sample streams: CSV ingestion, unit-cube normalization and synthetic
//! distributions with known Bayes risk.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};
use crate::forest::{SampleBuffer, Task};
use crate::rng::RandomSource;

/// Stream id used for synthetic training draws. Tree streams are `0..K`, so
/// a forest and its data can share a seed.
pub const TRAIN_STREAM: u64 = 1 << 62;
/// Stream id used for synthetic held-out draws.
pub const TEST_STREAM: u64 = (1 << 62) + 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleStream {
    pub task: Task,
    pub dimension: usize,
    pub samples: Vec<Sample>,
}

impl SampleStream {
    pub fn new(task: Task, dimension: usize) -> Self {
        Self {
            task,
            dimension,
            samples: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Sample> {
        self.samples.iter()
    }

    /// Splits off the last `fraction` of the stream as a held-out set.
    pub fn split_tail(mut self, fraction: f64) -> (SampleStream, SampleStream) {
        let keep = ((1.0 - fraction) * self.samples.len() as f64).round() as usize;
        let tail = self.samples.split_off(keep.min(self.samples.len()));
        let held = SampleStream {
            task: self.task,
            dimension: self.dimension,
            samples: tail,
        };
        (self, held)
    }

    pub fn normalized(&self, norm: &Normalizer) -> SampleStream {
        SampleStream {
            task: self.task,
            dimension: self.dimension,
            samples: self
                .samples
                .iter()
                .map(|s| Sample {
                    x: norm.apply(&s.x),
                    y: s.y,
                })
                .collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..self.dimension).map(|j| format!("x{j}")).collect();
        header.push("y".into());
        w.write_record(&header)?;
        for s in &self.samples {
            let mut row: Vec<String> = s.x.iter().map(|v| v.to_string()).collect();
            row.push(s.y.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_buffer(&self) -> SampleBuffer {
        let mut buf = SampleBuffer::new(self.dimension);
        for s in &self.samples {
            buf.push(&s.x, s.y);
        }
        buf
    }
}

impl<'a> IntoIterator for &'a SampleStream {
    type Item = &'a Sample;
    type IntoIter = std::slice::Iter<'a, Sample>;

    fn into_iter(self) -> Self::IntoIter {
        self.samples.iter()
    }
}

/// Reads a CSV with numeric features and one label column (`None` means
/// the last column).
pub fn load_csv(
    path: impl AsRef<Path>,
    has_header: bool,
    label_column: Option<usize>,
    task: Task,
) -> Result<SampleStream> {
    read_csv(std::fs::File::open(path)?, has_header, label_column, task)
}

pub fn read_csv<R: Read>(
    input: R,
    has_header: bool,
    label_column: Option<usize>,
    task: Task,
) -> Result<SampleStream> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut stream = SampleStream::new(task, 0);
    let mut arity = None;
    for record in reader.records() {
        let record = record?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        let width = record.len();
        match arity {
            None => arity = Some(width),
            Some(a) if a != width => {
                return Err(Error::Parse {
                    row,
                    message: format!("expected {a} fields, found {width}"),
                })
            }
            _ => {}
        }
        let label_at = label_column.unwrap_or(width.saturating_sub(1));
        if label_at >= width || width < 2 {
            return Err(Error::Parse {
                row,
                message: format!("label column {label_at} missing from a row of {width} fields"),
            });
        }
        let mut x = Vec::with_capacity(width - 1);
        let mut y = 0.0;
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row,
                message: format!("column {j}: {field:?} is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    message: format!("column {j}: non-finite value"),
                });
            }
            if j == label_at {
                y = v;
            } else {
                x.push(v);
            }
        }
        if task == Task::Classify && y != 0.0 && y != 1.0 {
            return Err(Error::Parse {
                row,
                message: format!("label {y} is not 0 or 1"),
            });
        }
        stream.dimension = x.len();
        stream.samples.push(Sample { x, y });
    }
    Ok(stream)
}

/// Reads an unlabeled CSV of numeric features.
pub fn read_features<R: Read>(input: R, has_header: bool) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        let x = record
            .iter()
            .enumerate()
            .map(|(j, field)| match field.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Parse {
                    row,
                    message: format!("column {j}: {field:?} is not a finite number"),
                }),
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != x.len() {
                return Err(Error::Parse {
                    row,
                    message: format!("expected {} fields, found {}", first.len(), x.len()),
                });
            }
        }
        rows.push(x);
    }
    Ok(rows)
}

/// Per-dimension affine map of the fitted range onto [0, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Normalizer {
    pub fn fit(stream: &SampleStream) -> Result<Self> {
        let Some(first) = stream.samples.first() else {
            return arg("cannot fit a normalizer on an empty stream");
        };
        let mut min = first.x.clone();
        let mut max = first.x.clone();
        for s in &stream.samples[1..] {
            for (j, v) in s.x.iter().enumerate() {
                min[j] = min[j].min(*v);
                max[j] = max[j].max(*v);
            }
        }
        Ok(Self { min, max })
    }

    /// Maps `x` into the unit cube; values beyond the fitted range are
    /// clamped and constant dimensions map to 0.5.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(j, &v)| {
                let (lo, hi) = (self.min[j], self.max[j]);
                if hi > lo {
                    ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
                } else {
                    0.5
                }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    /// `P(Y=1 | X=x) = x_1` on the unit cube.
    LipschitzClassify,
    /// `Y = 1{|X - 1/2| <= eps}`, X uniform on [0, 1].
    BandClassify,
    /// `Y = sin(2 pi x_1) + N(0, sigma^2)`.
    LipschitzRegress,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub dimension: usize,
    pub n: usize,
    pub seed: u64,
    pub epsilon: f64,
    pub noise_sd: f64,
}

impl SynthSpec {
    pub fn band(epsilon: f64, n: usize, seed: u64) -> Self {
        Self {
            kind: SynthKind::BandClassify,
            dimension: 1,
            n,
            seed,
            epsilon,
            noise_sd: 0.0,
        }
    }

    pub fn lipschitz_classify(dimension: usize, n: usize, seed: u64) -> Self {
        Self {
            kind: SynthKind::LipschitzClassify,
            dimension,
            n,
            seed,
            epsilon: 0.0,
            noise_sd: 0.0,
        }
    }

    pub fn lipschitz_regress(dimension: usize, n: usize, seed: u64, noise_sd: f64) -> Self {
        Self {
            kind: SynthKind::LipschitzRegress,
            dimension,
            n,
            seed,
            epsilon: 0.0,
            noise_sd,
        }
    }

    pub fn task(&self) -> Task {
        match self.kind {
            SynthKind::LipschitzRegress => Task::Regress,
            _ => Task::Classify,
        }
    }

    /// Conditional mean of Y at `x`: eta for classification, f for
    /// regression.
    pub fn target_mean(&self, x: &[f64]) -> f64 {
        match self.kind {
            SynthKind::LipschitzClassify => x[0],
            SynthKind::BandClassify => f64::from(u8::from((x[0] - 0.5).abs() <= self.epsilon)),
            SynthKind::LipschitzRegress => (2.0 * PI * x[0]).sin(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dimension == 0 {
            return arg("dimension must be >= 1");
        }
        match self.kind {
            SynthKind::BandClassify => {
                if self.dimension != 1 {
                    return arg("band distribution is one-dimensional");
                }
                if !(self.epsilon > 0.0 && self.epsilon < 0.25) {
                    return arg(format!(
                        "band epsilon must lie in (0, 1/4), got {}",
                        self.epsilon
                    ));
                }
            }
            SynthKind::LipschitzRegress => {
                if !(self.noise_sd >= 0.0) || !self.noise_sd.is_finite() {
                    return arg(format!("noise sd must be >= 0, got {}", self.noise_sd));
                }
            }
            SynthKind::LipschitzClassify => {}
        }
        Ok(())
    }

    /// Training draws.
    pub fn generate(&self) -> Result<SampleStream> {
        self.generate_on(TRAIN_STREAM)
    }

    /// Draws on an explicit random stream, e.g. [`TEST_STREAM`].
    pub fn generate_on(&self, stream: u64) -> Result<SampleStream> {
        self.validate()?;
        let mut rng = RandomSource::new(self.seed, stream);
        let mut out = SampleStream::new(self.task(), self.dimension);
        out.samples.reserve(self.n);
        for _ in 0..self.n {
            let x: Vec<f64> = (0..self.dimension).map(|_| rng.unit()).collect();
            let mean = self.target_mean(&x);
            let y = match self.kind {
                SynthKind::LipschitzClassify => f64::from(u8::from(rng.bernoulli(mean))),
                SynthKind::BandClassify => mean,
                SynthKind::LipschitzRegress => mean + self.noise_sd * rng.standard_normal(),
            };
            out.samples.push(Sample { x, y });
        }
        Ok(out)
    }
}

pub fn synth_band(epsilon: f64, n: usize, seed: u64) -> Result<SampleStream> {
    SynthSpec::band(epsilon, n, seed).generate()
}

pub fn synth_lipschitz_classify(dimension: usize, n: usize, seed: u64) -> Result<SampleStream> {
    SynthSpec::lipschitz_classify(dimension, n, seed).generate()
}

pub fn synth_lipschitz_regress(
    dimension: usize,
    n: usize,
    seed: u64,
    noise_sd: f64,
) -> Result<SampleStream> {
    SynthSpec::lipschitz_regress(dimension, n, seed, noise_sd).generate()
}

/// `F(lambda) = lambda + 4 exp(-lambda / 4)`, an upper bound on the
/// expected inverse length of the 1-D cell containing a point.
pub fn inverse_cell_length_bound(lifetime: f64) -> f64 {
    lifetime + 4.0 * (-lifetime / 4.0).exp()
}

/// Band half-width `1/4 ∧ 1/(4 F(lambda))` for which a fixed-lifetime
/// forest keeps a test error of at least `epsilon`.
pub fn band_epsilon(lifetime: f64) -> f64 {
    (0.25f64).min(1.0 / (4.0 * inverse_cell_length_bound(lifetime)))
}
