//! Experiment runners and file formats behind the `mondrian` command.

pub mod experiment;
pub mod model;

use anyhow::{anyhow, bail, ensure, Context, Result};
use mondrian_forest::data::{SynthKind, SynthSpec};

pub use experiment::{ExperimentResult, Record, Series};

/// Parses `kind:key=value,...`, for example `classify:d=2,n=10000` or
/// `band:eps=0.05`. Kinds are `classify`, `regress` and `band`; keys are
/// `d`, `n`, `eps` and `sigma`.
pub fn parse_synth(text: &str, seed: u64) -> Result<SynthSpec> {
    let (kind, rest) = text.split_once(':').unwrap_or((text, ""));
    let mut spec = match kind {
        "classify" | "lipschitz-classify" => SynthSpec::lipschitz_classify(2, 10_000, seed),
        "regress" | "lipschitz-regress" => SynthSpec::lipschitz_regress(1, 10_000, seed, 0.1),
        "band" => SynthSpec::band(0.0, 10_000, seed),
        other => bail!("unknown synthetic kind {other:?}"),
    };
    for pair in rest.split(',').filter(|p| !p.is_empty()) {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| anyhow!("synth option {pair:?} is not key=value"))?;
        let bad = || format!("bad value for {key}: {value:?}");
        match key {
            "d" => spec.dimension = value.parse().with_context(bad)?,
            "n" => spec.n = value.parse().with_context(bad)?,
            "eps" => spec.epsilon = value.parse().with_context(bad)?,
            "sigma" => spec.noise_sd = value.parse().with_context(bad)?,
            other => bail!("unknown synth option {other:?}"),
        }
    }
    if spec.kind == SynthKind::BandClassify {
        ensure!(spec.epsilon > 0.0, "band needs eps=<half-width>");
        ensure!(spec.dimension == 1, "band is one-dimensional");
    }
    Ok(spec)
}

/// Parses a comma-separated list of sample sizes. Accepts `1e3`-style
/// values when they are whole numbers.
pub fn parse_checkpoints(text: &str) -> Result<Vec<usize>> {
    let out = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            let v: f64 = s.parse().with_context(|| format!("bad checkpoint {s:?}"))?;
            ensure!(
                v >= 0.0 && v.fract() == 0.0,
                "checkpoint {s:?} is not a whole number"
            );
            Ok(v as usize)
        })
        .collect::<Result<Vec<_>>>()?;
    ensure!(
        out.windows(2).all(|w| w[0] < w[1]),
        "checkpoints must be strictly increasing"
    );
    Ok(out)
}
