//! Goodness-of-fit and two-sample tests used by the verification suite.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, DiscreteCDF, Poisson};

/// Minimum expected count per bin after merging.
pub const MIN_EXPECTED: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub statistic: f64,
    pub p_value: f64,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample mean and its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = mean(xs);
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

pub fn chi_square_sf(statistic: f64, df: usize) -> f64 {
    if df == 0 {
        return 1.0;
    }
    let dist = ChiSquared::new(df as f64).expect("df > 0");
    dist.sf(statistic)
}

/// Survival function of the Kolmogorov distribution,
/// `P(K > z) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 z^2)`.
pub fn kolmogorov_sf(z: f64) -> f64 {
    if z < 0.2 {
        return 1.0;
    }
    if z < 1.0 {
        // Jacobi theta form converges fast for small z.
        let c = std::f64::consts::PI.powi(2) / (8.0 * z * z);
        let s: f64 = (1..=20)
            .map(|k| (-((2 * k - 1) as f64).powi(2) * c).exp())
            .sum();
        return (1.0 - (2.0 * std::f64::consts::PI).sqrt() / z * s).clamp(0.0, 1.0);
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * z * z).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Kolmogorov-Smirnov test of `samples` against Uniform[0,1], with
/// Stephens' small-sample correction of the scaled statistic.
pub fn ks_uniform(samples: &[f64]) -> TestOutcome {
    let n = samples.len();
    if n == 0 {
        return TestOutcome {
            statistic: 0.0,
            p_value: 1.0,
        };
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let nf = n as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let x = x.clamp(0.0, 1.0);
            ((i + 1) as f64 / nf - x).max(x - i as f64 / nf)
        })
        .fold(0.0, f64::max);
    let en = nf.sqrt();
    TestOutcome {
        statistic: d,
        p_value: kolmogorov_sf((en + 0.12 + 0.11 / en) * d),
    }
}

/// Two-sample Kolmogorov-Smirnov test. Ties (including infinities) are
/// handled by stepping both empirical CDFs over equal values together.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> TestOutcome {
    if a.is_empty() || b.is_empty() {
        return TestOutcome {
            statistic: 0.0,
            p_value: 1.0,
        };
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n, m) = (xs.len(), ys.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = if xs[i].total_cmp(&ys[j]).is_le() {
            xs[i]
        } else {
            ys[j]
        };
        while i < n && xs[i] == v {
            i += 1;
        }
        while j < m && ys[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let en = ne.sqrt();
    TestOutcome {
        statistic: d,
        p_value: kolmogorov_sf((en + 0.12 + 0.11 / en) * d),
    }
}

/// Groups consecutive bins so every group's expected count reaches
/// [`MIN_EXPECTED`]; a short trailing group is folded into its predecessor.
/// Returns the group boundaries as index ranges.
fn merge_bins(expected: &[f64]) -> Vec<std::ops::Range<usize>> {
    let mut groups = Vec::new();
    let mut start = 0;
    let mut acc = 0.0;
    for (k, e) in expected.iter().enumerate() {
        acc += e;
        if acc >= MIN_EXPECTED {
            groups.push(start..k + 1);
            start = k + 1;
            acc = 0.0;
        }
    }
    if start < expected.len() {
        match groups.last_mut() {
            Some(last) => last.end = expected.len(),
            None => groups.push(start..expected.len()),
        }
    }
    groups
}

/// Chi-square goodness of fit of nonnegative integer `counts` against
/// Poisson(`mean`). The last bin collects the upper tail.
pub fn poisson_gof(counts: &[u64], mean: f64) -> TestOutcome {
    let total = counts.len() as f64;
    if counts.is_empty() {
        return TestOutcome {
            statistic: 0.0,
            p_value: 1.0,
        };
    }
    if mean == 0.0 {
        let ok = counts.iter().all(|&c| c == 0);
        return TestOutcome {
            statistic: if ok { 0.0 } else { f64::INFINITY },
            p_value: if ok { 1.0 } else { 0.0 },
        };
    }
    let dist = Poisson::new(mean).expect("positive mean");
    let max_obs = counts.iter().copied().max().unwrap_or(0);
    let top = max_obs.max(mean.ceil() as u64 + 1) as usize;

    let mut observed = vec![0.0; top + 1];
    for &c in counts {
        observed[(c as usize).min(top)] += 1.0;
    }
    let mut expected: Vec<f64> = (0..top).map(|k| total * dist.pmf(k as u64)).collect();
    expected.push(total * dist.sf(top as u64 - 1));

    chi_square_grouped(&observed, &expected)
}

fn chi_square_grouped(observed: &[f64], expected: &[f64]) -> TestOutcome {
    let groups = merge_bins(expected);
    let mut stat = 0.0;
    for g in &groups {
        let o: f64 = observed[g.clone()].iter().sum();
        let e: f64 = expected[g.clone()].iter().sum();
        if e > 0.0 {
            stat += (o - e).powi(2) / e;
        } else if o > 0.0 {
            stat = f64::INFINITY;
        }
    }
    let df = groups.len().saturating_sub(1);
    TestOutcome {
        statistic: stat,
        p_value: chi_square_sf(stat, df),
    }
}

/// Chi-square test that two samples of nonnegative integers come from the
/// same distribution (2 x k contingency table, bins merged on pooled
/// expected counts).
pub fn chi_square_two_sample(a: &[u64], b: &[u64]) -> TestOutcome {
    if a.is_empty() || b.is_empty() {
        return TestOutcome {
            statistic: 0.0,
            p_value: 1.0,
        };
    }
    let top = a.iter().chain(b).copied().max().unwrap_or(0) as usize;
    let mut ca = vec![0.0; top + 1];
    let mut cb = vec![0.0; top + 1];
    for &v in a {
        ca[v as usize] += 1.0;
    }
    for &v in b {
        cb[v as usize] += 1.0;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let n = na + nb;
    // The smaller arm has the smaller expected counts; merge on it.
    let min_share = na.min(nb) / n;
    let pooled_min: Vec<f64> = ca
        .iter()
        .zip(&cb)
        .map(|(x, y)| (x + y) * min_share)
        .collect();
    let groups = merge_bins(&pooled_min);

    let mut stat = 0.0;
    for g in &groups {
        let oa: f64 = ca[g.clone()].iter().sum();
        let ob: f64 = cb[g.clone()].iter().sum();
        let col = oa + ob;
        let ea = col * na / n;
        let eb = col * nb / n;
        if col > 0.0 {
            stat += (oa - ea).powi(2) / ea + (ob - eb).powi(2) / eb;
        }
    }
    let df = groups.len().saturating_sub(1);
    TestOutcome {
        statistic: stat,
        p_value: chi_square_sf(stat, df),
    }
}

/// Ordinary least-squares slope of `ys` on `xs`.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let mx = mean(xs);
    let my = mean(ys);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}
