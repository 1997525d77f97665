//! Post-run analysis: loss-curve smoothing, Mann-Whitney U arm comparisons
//! with Bonferroni correction, and the update-stability study that gauges how
//! many client reports an iteration really needs.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::clients::{ArmModel, SyntheticPool};
use crate::config::EvalConfig;
use crate::error::{Error, Result};
use crate::protocol::{weighted_average, ClientUpdate};
use crate::rng::{derive_stream, stream};

/// Trailing mean: element t averages the last min(t+1, window) values.
/// Output length equals input length.
pub fn rolling_average(series: &[f64], window: usize) -> Vec<f64> {
    assert!(window >= 1, "window must be >= 1");
    let mut out = Vec::with_capacity(series.len());
    let mut sum = 0.0;
    for t in 0..series.len() {
        sum += series[t];
        if t >= window {
            sum -= series[t - window];
        }
        let len = (t + 1).min(window);
        out.push(sum / len as f64);
    }
    out
}

/// Sum of absolute componentwise differences.
pub fn l1_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::invalid(format!(
            "l1_distance over lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    Ok(u.iter().zip(v).map(|(a, b)| (a - b).abs()).sum())
}

/// Pooled sample size up to which the exact permutation distribution is
/// enumerated instead of the normal approximation. C(16, 8) = 12,870
/// assignments — cheap, and the approximation is unreliable below this.
const EXACT_MAX_POOLED: usize = 16;

/// Midranks of an ascending-sorted slice (ties get the mean of the positions
/// they span), 1-based.
fn midranks_sorted(sorted: &[f64]) -> Vec<f64> {
    let n = sorted.len();
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && sorted[j] == sorted[i] {
            j += 1;
        }
        // Positions i+1 ..= j share the rank (i+1 + j) / 2.
        let mid = (i + 1 + j) as f64 / 2.0;
        for r in &mut ranks[i..j] {
            *r = mid;
        }
        i = j;
    }
    ranks
}

/// U statistic of `a` against `b` via midranks: the number of (a, b) pairs
/// won by `a`, counting ties as half.
fn u_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut pooled: Vec<(f64, bool)> = a
        .iter()
        .map(|&x| (x, true))
        .chain(b.iter().map(|&x| (x, false)))
        .collect();
    pooled.sort_by(|x, y| x.0.total_cmp(&y.0));
    let values: Vec<f64> = pooled.iter().map(|p| p.0).collect();
    let ranks = midranks_sorted(&values);
    let r_a: f64 = ranks
        .iter()
        .zip(&pooled)
        .filter(|(_, p)| p.1)
        .map(|(r, _)| r)
        .sum();
    let n_a = a.len() as f64;
    r_a - n_a * (n_a + 1.0) / 2.0
}

/// Exact two-sided permutation p-value: the fraction of all C(n, n1) group
/// assignments whose U lies at least as far from n1*n2/2 as the observed one.
fn exact_p(pooled_ranks: &[f64], n1: usize, u_obs: f64) -> f64 {
    let n = pooled_ranks.len();
    let n2 = n - n1;
    let mu = (n1 * n2) as f64 / 2.0;
    let obs_dev = (u_obs - mu).abs();
    let offset = (n1 * (n1 + 1)) as f64 / 2.0;

    let mut hits = 0u64;
    let mut total = 0u64;
    let mut idx: Vec<usize> = (0..n1).collect();
    loop {
        let u = idx.iter().map(|&i| pooled_ranks[i]).sum::<f64>() - offset;
        // Ranks are multiples of 1/2, so sums are exact; the epsilon only
        // guards the subtraction.
        if (u - mu).abs() >= obs_dev - 1e-9 {
            hits += 1;
        }
        total += 1;

        // Next lexicographic combination.
        let mut i = n1;
        loop {
            if i == 0 {
                return hits as f64 / total as f64;
            }
            i -= 1;
            if idx[i] != i + n - n1 {
                idx[i] += 1;
                for j in i + 1..n1 {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Two-sided p via the normal approximation with tie-corrected variance and
/// continuity correction.
fn normal_p(u: f64, n1: usize, n2: usize, tie_sum: f64) -> f64 {
    let (n1f, n2f) = (n1 as f64, n2 as f64);
    let n = n1f + n2f;
    let mu = n1f * n2f / 2.0;
    let var = n1f * n2f / 12.0 * ((n + 1.0) - tie_sum / (n * (n - 1.0)));
    if var <= 0.0 {
        return 1.0; // every pooled value identical
    }
    let diff = u - mu;
    if diff.abs() <= 0.5 {
        return 1.0;
    }
    let z = (diff.abs() - 0.5) / var.sqrt();
    let gauss = Normal::new(0.0, 1.0).expect("unit normal");
    (2.0 * (1.0 - gauss.cdf(z))).clamp(0.0, 1.0)
}

/// Mann-Whitney U test of `a` against `b`.
///
/// Returns (U_a, two-sided p). U counts pairs won by `a` with ties at half,
/// computed by midranked rank sums. Small pooled samples (n <= 16) get the
/// exact permutation p; larger ones the tie-corrected, continuity-corrected
/// normal approximation. An all-identical pool yields p = 1.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("mann_whitney_u needs two nonempty samples"));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::invalid("mann_whitney_u samples must be finite"));
    }
    let u = u_statistic(a, b);
    let (n1, n2) = (a.len(), b.len());
    let n = n1 + n2;

    let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    pooled.sort_by(f64::total_cmp);
    if pooled[0] == pooled[n - 1] {
        return Ok((u, 1.0));
    }

    let p = if n <= EXACT_MAX_POOLED {
        let ranks = midranks_sorted(&pooled);
        exact_p(&ranks, n1, u)
    } else {
        // Sum of t^3 - t over tie groups.
        let mut tie_sum = 0.0;
        let mut i = 0;
        while i < n {
            let mut j = i + 1;
            while j < n && pooled[j] == pooled[i] {
                j += 1;
            }
            let t = (j - i) as f64;
            tie_sum += t * t * t - t;
            i = j;
        }
        normal_p(u, n1, n2, tie_sum)
    };
    Ok((u, p))
}

/// One arm's pooled per-event metric samples.
#[derive(Debug, Clone)]
pub struct ArmSamples {
    pub name: String,
    pub chars_typed: Vec<f64>,
    pub selected_ranks: Vec<f64>,
}

impl ArmSamples {
    fn metric(&self, name: &str) -> &[f64] {
        match name {
            "chars_typed" => &self.chars_typed,
            _ => &self.selected_ranks,
        }
    }
}

/// Per-metric summary of one arm.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmSummary {
    pub arm: String,
    pub metric: String,
    pub mean: f64,
    pub n: usize,
}

/// One pairwise test result.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub arms: String,
    pub metric: String,
    pub u: f64,
    pub p: f64,
    pub significant: bool,
}

/// Arm means plus all pairwise tests at the corrected significance level.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub summaries: Vec<ArmSummary>,
    pub comparisons: Vec<Comparison>,
    /// alpha / number of comparisons.
    pub threshold: f64,
}

const METRICS: [&str; 2] = ["chars_typed", "selected_rank"];

/// Compares every pair of arms on every metric with Mann-Whitney U, flagging
/// significance at alpha divided by the comparison count (Bonferroni).
/// `num_comparisons` overrides the divisor; by default it is the number of
/// tests actually run.
pub fn compare_arms(
    arms: &[ArmSamples],
    alpha: f64,
    num_comparisons: Option<usize>,
) -> Result<EvalReport> {
    if arms.len() < 2 {
        return Err(Error::invalid("compare_arms needs at least two arms"));
    }
    let pairs = arms.len() * (arms.len() - 1) / 2;
    let divisor = num_comparisons.unwrap_or(pairs * METRICS.len());
    if divisor == 0 {
        return Err(Error::invalid("num_comparisons must be >= 1"));
    }
    let threshold = alpha / divisor as f64;

    let mut summaries = Vec::new();
    for arm in arms {
        for metric in METRICS {
            let data = arm.metric(metric);
            if data.is_empty() {
                return Err(Error::invalid(format!("arm {} has no {metric} samples", arm.name)));
            }
            summaries.push(ArmSummary {
                arm: arm.name.clone(),
                metric: metric.to_string(),
                mean: data.iter().sum::<f64>() / data.len() as f64,
                n: data.len(),
            });
        }
    }

    let mut comparisons = Vec::new();
    for i in 0..arms.len() {
        for j in i + 1..arms.len() {
            for metric in METRICS {
                let (u, p) = mann_whitney_u(arms[i].metric(metric), arms[j].metric(metric))?;
                comparisons.push(Comparison {
                    arms: format!("{}_vs_{}", arms[i].name, arms[j].name),
                    metric: metric.to_string(),
                    u,
                    p,
                    significant: p < threshold,
                });
            }
        }
    }
    Ok(EvalReport { summaries, comparisons, threshold })
}

/// An arm as the evaluator runs it.
#[derive(Debug, Clone)]
pub struct NamedArm {
    pub name: String,
    pub model: ArmModel,
}

/// Runs every arm over the same fresh evaluation events and compares them.
pub fn evaluate_arms(
    pool: &SyntheticPool,
    arms: &[NamedArm],
    eval_cfg: &EvalConfig,
    alpha: f64,
    num_comparisons: Option<usize>,
) -> Result<EvalReport> {
    let mut samples = Vec::with_capacity(arms.len());
    for arm in arms {
        let events = pool.eval_arm(&arm.model, eval_cfg)?;
        samples.push(ArmSamples {
            name: arm.name.clone(),
            chars_typed: events.iter().map(|&(c, _)| c as f64).collect(),
            selected_ranks: events.iter().map(|&(_, r)| r as f64).collect(),
        });
    }
    compare_arms(&samples, alpha, num_comparisons)
}

/// One iteration's subsampling outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityRow {
    pub iteration: u64,
    /// Mean L1 distance between subsample aggregates and the full aggregate.
    pub mean_l1: f64,
    /// Sample standard deviation over trials.
    pub std_l1: f64,
    pub num_updates: u64,
    /// False when the iteration had fewer updates than the sample size, in
    /// which case the full set was used and the distance is trivially 0.
    pub subsampled: bool,
}

#[derive(Debug, Clone, Default)]
pub struct StabilityReport {
    pub rows: Vec<StabilityRow>,
}

/// For each iteration in the update log: draw `trials` subsamples of
/// `sample_size` updates without replacement, aggregate each the same way the
/// server would, and measure the L1 distance to the full-iteration aggregate.
/// Deterministic given the seed.
pub fn stability_study(
    updates: &[ClientUpdate],
    sample_size: usize,
    trials: usize,
    seed: u64,
) -> Result<StabilityReport> {
    if sample_size == 0 || trials == 0 {
        return Err(Error::invalid("stability_study needs sample_size >= 1 and trials >= 1"));
    }
    let mut by_iteration: BTreeMap<u64, Vec<ClientUpdate>> = BTreeMap::new();
    for u in updates {
        by_iteration.entry(u.iteration).or_default().push(u.clone());
    }

    let mut rows = Vec::with_capacity(by_iteration.len());
    for (iteration, group) in by_iteration {
        let full = weighted_average(&group)?;
        if group.len() < sample_size {
            rows.push(StabilityRow {
                iteration,
                mean_l1: 0.0,
                std_l1: 0.0,
                num_updates: group.len() as u64,
                subsampled: false,
            });
            continue;
        }
        let mut distances = Vec::with_capacity(trials);
        for trial in 0..trials {
            let mut rng = derive_stream(seed, trial as u64, iteration, stream::STABILITY);
            let chosen = rand::seq::index::sample(&mut rng, group.len(), sample_size);
            let subsample: Vec<ClientUpdate> =
                chosen.iter().map(|i| group[i].clone()).collect();
            let agg = weighted_average(&subsample)?;
            distances.push(l1_distance(&agg, &full)?);
        }
        let mean = distances.iter().sum::<f64>() / trials as f64;
        let std = if trials > 1 {
            (distances.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (trials - 1) as f64)
                .sqrt()
        } else {
            0.0
        };
        rows.push(StabilityRow {
            iteration,
            mean_l1: mean,
            std_l1: std,
            num_updates: group.len() as u64,
            subsampled: true,
        });
    }
    Ok(StabilityReport { rows })
}

pub const STABILITY_CSV_HEADER: &str = "iteration,mean_l1,std_l1";
pub const EVAL_CSV_HEADER: &str = "arm,metric,mean,n,U,p,significant";

pub fn write_stability_csv(path: &Path, report: &StabilityReport) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{STABILITY_CSV_HEADER}")?;
    for row in &report.rows {
        writeln!(out, "{},{},{}", row.iteration, row.mean_l1, row.std_l1)?;
    }
    out.flush()?;
    Ok(())
}

/// Arm summaries first (empty test columns), then pairwise tests (empty
/// sample columns), all under one header.
pub fn write_eval_csv(path: &Path, report: &EvalReport) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{EVAL_CSV_HEADER}")?;
    for s in &report.summaries {
        writeln!(out, "{},{},{},{},,,", s.arm, s.metric, s.mean, s.n)?;
    }
    for c in &report.comparisons {
        writeln!(out, "{},{},,,{},{},{}", c.arms, c.metric, c.u, c.p, c.significant)?;
    }
    out.flush()?;
    Ok(())
}
