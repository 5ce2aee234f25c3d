//! Statistical harness: Monte Carlo estimates of the exploration constants,
//! monitors for the concentration events the regret bounds rely on, regret
//! curves over horizon and gap grids, and log-log exponent fits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::factorial::ln_binomial;

use crate::behavior::BehaviorConfig;
use crate::config::{InstanceConfig, PolicySpec};
use crate::engine::{mean_se, run_batch, run_on_tape, Policy, RunOptions, SimTrace};
use crate::error::{Error, Result};
use crate::graph::{build_full_disclosure, InfoGraph, LevelSpec};
use crate::model::{BanditInstance, RewardTape};
use crate::seeding::{derive_seed, TAG_MONITOR};

/// Gap and per-level confidence widths of the L-level analysis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapThresholds {
    pub delta: f64,
    /// `eps[0] = 1`, `eps[1]` from the first-level path counts, `eps[l] = 1/(4 sqrt(T_l sigma))` above.
    pub eps_levels: Vec<f64>,
}

impl GapThresholds {
    /// `q_hat` holds expected per-path pulls of each arm; with more than two arms the
    /// two smallest enter the first-level width.
    pub fn new(delta: f64, q_hat: &[f64], spec: &LevelSpec) -> Result<Self> {
        spec.validate()?;
        if q_hat.len() < 2 || q_hat.iter().any(|&q| !(q > 0.0)) {
            return Err(Error::config(
                "need positive per-path pull rates for at least two arms",
            ));
        }
        let mut q = q_hat.to_vec();
        q.sort_by(f64::total_cmp);
        let sigma = spec.sigma as f64;
        let t1 = spec.group_sizes[0] as f64;
        let mut eps = vec![
            1.0,
            1.0 / (4.0 * (q[0] * t1 * sigma).sqrt()) + 1.0 / (4.0 * (q[1] * t1 * sigma).sqrt()),
        ];
        for l in 2..spec.num_levels as usize {
            eps.push(1.0 / (4.0 * (spec.group_sizes[l - 1] as f64 * sigma).sqrt()));
        }
        eps.truncate(spec.num_levels as usize);
        Ok(Self {
            delta,
            eps_levels: eps,
        })
    }

    pub fn is_strictly_decreasing(&self) -> bool {
        self.eps_levels.windows(2).all(|w| w[1] < w[0])
    }

    /// The lowest level whose width is already below the gap, if any.
    pub fn resolving_level(&self) -> Option<usize> {
        self.eps_levels.iter().position(|&e| e < self.delta)
    }
}

/// Per-path exploration constants of a full-disclosure path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdpConstants {
    pub trials: u64,
    /// Expected pulls of each arm in one path.
    pub q_hat: Vec<f64>,
    pub q_se: Vec<f64>,
    /// Probability that a path samples every arm.
    pub p_hat: f64,
    pub p_se: f64,
}

fn trial_seed(seed: u64, i: u64) -> u64 {
    derive_seed(&[TAG_MONITOR, seed, i])
}

/// Monte Carlo over `trials` independent full-disclosure paths of `path_len` rounds.
pub fn estimate_fdp_constants(
    instance: &BanditInstance,
    cfg: &BehaviorConfig,
    path_len: u64,
    trials: u64,
    seed: u64,
) -> Result<FdpConstants> {
    if trials < 1 || path_len < 1 {
        return Err(Error::config("trials and path_len must be at least 1"));
    }
    let inst = instance.with_horizon(path_len)?;
    let policy = Policy::Graph(build_full_disclosure(path_len)?);
    let k = inst.num_arms();
    let pulls: Vec<Vec<u64>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let tape = RewardTape::new(trial_seed(seed, i), &inst);
            run_on_tape(&inst, &policy, cfg, &tape, RunOptions::default()).map(|t| t.pulls_per_arm)
        })
        .collect::<Result<_>>()?;
    let mut q_hat = Vec::with_capacity(k);
    let mut q_se = Vec::with_capacity(k);
    for a in 0..k {
        let xs: Vec<f64> = pulls.iter().map(|p| p[a] as f64).collect();
        let (m, se) = mean_se(&xs);
        q_hat.push(m);
        q_se.push(se);
    }
    let all: Vec<f64> = pulls
        .iter()
        .map(|p| f64::from(u8::from(p.iter().all(|&n| n > 0))))
        .collect();
    let (p_hat, p_se) = mean_se(&all);
    Ok(FdpConstants {
        trials,
        q_hat,
        q_se,
        p_hat,
        p_se,
    })
}

/// Frequency of one monitored event across trials.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventStats {
    pub event: String,
    /// The threshold the indicator was checked against (for per-group events, the largest one used).
    pub threshold: f64,
    pub trials: u64,
    pub hits: u64,
    pub frequency: f64,
    /// Binomial standard error of `frequency`.
    pub se: f64,
    pub indicators: Vec<bool>,
}

impl EventStats {
    fn new(event: &str, threshold: f64, indicators: Vec<bool>) -> Self {
        let trials = indicators.len() as u64;
        let hits = indicators.iter().filter(|&&b| b).count() as u64;
        let frequency = if trials == 0 {
            f64::NAN
        } else {
            hits as f64 / trials as f64
        };
        let se = (frequency * (1.0 - frequency) / trials.max(1) as f64).sqrt();
        Self {
            event: event.to_string(),
            threshold,
            trials,
            hits,
            frequency,
            se,
            indicators,
        }
    }
}

/// Rounds and path length of each first-level group.
struct Group {
    rounds: Vec<(u64, u64)>,
    paths: u64,
    path_len: u64,
}

fn first_level_groups(g: &InfoGraph) -> Vec<Group> {
    g.first_level_groups()
        .into_values()
        .map(|idx| {
            let blocks = g.blocks();
            Group {
                rounds: idx
                    .iter()
                    .map(|&i| (blocks[i].start, blocks[i].end))
                    .collect(),
                paths: idx.len() as u64,
                path_len: idx.iter().map(|&i| blocks[i].len()).max().unwrap_or(0),
            }
        })
        .collect()
}

/// Per-arm (pulls, reward sum) inside a group.
fn group_stats(trace: &SimTrace, group: &Group, k: usize) -> (Vec<u64>, Vec<u64>) {
    let (mut n, mut s) = (vec![0u64; k], vec![0u64; k]);
    for &(lo, hi) in &group.rounds {
        for o in &trace.outcomes[(lo - 1) as usize..hi as usize] {
            n[o.arm] += 1;
            s[o.arm] += o.reward as u64;
        }
    }
    (n, s)
}

fn traces(
    instance: &BanditInstance,
    graph: &InfoGraph,
    cfg: &BehaviorConfig,
    seeds: &[u64],
) -> Result<Vec<SimTrace>> {
    let policy = Policy::Graph(graph.clone());
    seeds
        .par_iter()
        .map(|&s| {
            run_on_tape(
                instance,
                &policy,
                cfg,
                &RewardTape::new(s, instance),
                RunOptions::default(),
            )
        })
        .collect()
}

/// Pull-count concentration: in each first-level group of `T1` paths, every arm's
/// pull count is within `path_len * sqrt(T1 ln(2K/delta) / 2)` of `q_hat[a] * T1`.
/// One indicator per (run, group).
pub fn pull_count_monitor(
    instance: &BanditInstance,
    graph: &InfoGraph,
    cfg: &BehaviorConfig,
    seeds: &[u64],
    delta: f64,
    q_hat: &[f64],
) -> Result<EventStats> {
    let k = instance.num_arms();
    if q_hat.len() != k {
        return Err(Error::config(format!(
            "q_hat has {} entries for {k} arms",
            q_hat.len()
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::config("delta must lie in (0, 1)"));
    }
    let groups = first_level_groups(graph);
    if groups.is_empty() {
        return Err(Error::config("graph has no labeled first-level groups"));
    }
    let bound = |grp: &Group| {
        grp.path_len as f64 * (grp.paths as f64 * (2.0 * k as f64 / delta).ln() / 2.0).sqrt()
    };
    let mut ind = Vec::new();
    for tr in traces(instance, graph, cfg, seeds)? {
        for grp in &groups {
            let (n, _) = group_stats(&tr, grp, k);
            let b = bound(grp);
            ind.push((0..k).all(|a| (n[a] as f64 - q_hat[a] * grp.paths as f64).abs() <= b));
        }
    }
    let widest = groups.iter().map(bound).fold(0.0, f64::max);
    Ok(EventStats::new("pull_count", widest, ind))
}

/// Segment-mean concentration: every arm's mean reward inside each first-level
/// group is within `sqrt(conf_const * ln T / N)` of its true mean.
pub fn segment_mean_monitor(
    instance: &BanditInstance,
    graph: &InfoGraph,
    cfg: &BehaviorConfig,
    seeds: &[u64],
    conf_const: f64,
) -> Result<EventStats> {
    let k = instance.num_arms();
    let groups = first_level_groups(graph);
    let ln_t = (instance.horizon() as f64).ln().max(1.0);
    let mut ind = Vec::new();
    for tr in traces(instance, graph, cfg, seeds)? {
        for grp in &groups {
            let (n, s) = group_stats(&tr, grp, k);
            ind.push((0..k).filter(|&a| n[a] > 0).all(|a| {
                let width = (conf_const * ln_t / n[a] as f64).sqrt();
                (s[a] as f64 / n[a] as f64 - instance.mean(a)).abs() <= width
            }));
        }
    }
    Ok(EventStats::new(
        "segment_mean",
        (conf_const * ln_t).sqrt(),
        ind,
    ))
}

/// High/low co-deviation inside first-level groups. `inverted` counts groups where
/// the best arm sits at least `1/sqrt(N)` below its mean while the runner-up sits
/// `1/sqrt(N)` above; `aligned` counts the reverse.
pub fn co_deviation_monitor(
    instance: &BanditInstance,
    graph: &InfoGraph,
    cfg: &BehaviorConfig,
    seeds: &[u64],
) -> Result<(EventStats, EventStats)> {
    let k = instance.num_arms();
    let best = instance.best_arm();
    let second = (0..k)
        .filter(|&a| a != best)
        .max_by(|&a, &b| instance.mean(a).total_cmp(&instance.mean(b)))
        .expect("at least two arms");
    let groups = first_level_groups(graph);
    let dev = |n: u64, s: u64, a: usize| -> Option<f64> {
        (n > 0).then(|| (s as f64 / n as f64 - instance.mean(a)) * (n as f64).sqrt())
    };
    let (mut inv, mut ali) = (Vec::new(), Vec::new());
    for tr in traces(instance, graph, cfg, seeds)? {
        for grp in &groups {
            let (n, s) = group_stats(&tr, grp, k);
            let (db, ds) = (
                dev(n[best], s[best], best),
                dev(n[second], s[second], second),
            );
            match (db, ds) {
                (Some(db), Some(ds)) => {
                    inv.push(db <= -1.0 && ds >= 1.0);
                    ali.push(db >= 1.0 && ds <= -1.0);
                }
                _ => {
                    inv.push(false);
                    ali.push(false);
                }
            }
        }
    }
    Ok((
        EventStats::new("co_deviation_inverted", 1.0, inv),
        EventStats::new("co_deviation_aligned", 1.0, ali),
    ))
}

/// Monte Carlo, exact and normal-approximation probabilities of a `1/sqrt(n)` deviation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AntiConcentration {
    pub mu: f64,
    pub n: u64,
    pub trials: u64,
    pub high_freq: f64,
    pub low_freq: f64,
    pub high_exact: f64,
    pub low_exact: f64,
    pub high_normal: f64,
    pub low_normal: f64,
    /// Standard errors of the frequencies under the exact probabilities.
    pub high_se: f64,
    pub low_se: f64,
}

fn is_high(ones: u64, n: u64, mu: f64) -> bool {
    ones as f64 / n as f64 >= mu + 1.0 / (n as f64).sqrt()
}

fn is_low(ones: u64, n: u64, mu: f64) -> bool {
    ones as f64 / n as f64 <= mu - 1.0 / (n as f64).sqrt()
}

fn bernoulli_sum(rng: &mut ChaCha8Rng, n: u64, mu: f64) -> u64 {
    (0..n).filter(|_| rng.random::<f64>() < mu).count() as u64
}

/// `P[Binomial(n, mu) ∈ {k : keep(k)}]`, summed term by term in log space.
pub fn binomial_probability(n: u64, mu: f64, keep: impl Fn(u64) -> bool) -> f64 {
    if mu <= 0.0 {
        return if keep(0) { 1.0 } else { 0.0 };
    }
    if mu >= 1.0 {
        return if keep(n) { 1.0 } else { 0.0 };
    }
    let (lp, lq) = (mu.ln(), (1.0 - mu).ln());
    (0..=n)
        .filter(|&k| keep(k))
        .map(|k| (ln_binomial(n, k) + k as f64 * lp + (n - k) as f64 * lq).exp())
        .sum::<f64>()
        .min(1.0)
}

pub fn anticoncentration_monitor(
    mu: f64,
    n: u64,
    trials: u64,
    seed: u64,
) -> Result<AntiConcentration> {
    if n < 1 || trials < 1 {
        return Err(Error::config("n and trials must be at least 1"));
    }
    if !(0.0..=1.0).contains(&mu) {
        return Err(Error::config("mu must lie in [0, 1]"));
    }
    let (hi, lo) = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(seed, i));
            let ones = bernoulli_sum(&mut rng, n, mu);
            (
                u64::from(is_high(ones, n, mu)),
                u64::from(is_low(ones, n, mu)),
            )
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let high_exact = binomial_probability(n, mu, |k| is_high(k, n, mu));
    let low_exact = binomial_probability(n, mu, |k| is_low(k, n, mu));
    let sd = (mu * (1.0 - mu)).sqrt();
    let (high_normal, low_normal) = if sd > 0.0 {
        let z = Normal::new(0.0, 1.0).expect("standard normal");
        (1.0 - z.cdf(1.0 / sd), z.cdf(-1.0 / sd))
    } else {
        (0.0, 0.0)
    };
    let t = trials as f64;
    Ok(AntiConcentration {
        mu,
        n,
        trials,
        high_freq: hi as f64 / t,
        low_freq: lo as f64 / t,
        high_exact,
        low_exact,
        high_normal,
        low_normal,
        high_se: (high_exact * (1.0 - high_exact) / t).sqrt(),
        low_se: (low_exact * (1.0 - low_exact) / t).sqrt(),
    })
}

/// Joint frequency of (arm a high, arm b low) over independent samples of `n`
/// pulls each, against the product of the two marginal frequencies.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointDeviation {
    pub trials: u64,
    pub joint: f64,
    pub product: f64,
    /// Standard error of `joint` under the product probability.
    pub se: f64,
}

pub fn joint_deviation_monitor(
    mu_a: f64,
    mu_b: f64,
    n: u64,
    trials: u64,
    seed: u64,
) -> Result<JointDeviation> {
    if n < 1 || trials < 1 {
        return Err(Error::config("n and trials must be at least 1"));
    }
    let (ha, lb, both) = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(seed, i));
            let h = is_high(bernoulli_sum(&mut rng, n, mu_a), n, mu_a);
            let l = is_low(bernoulli_sum(&mut rng, n, mu_b), n, mu_b);
            (u64::from(h), u64::from(l), u64::from(h && l))
        })
        .reduce(|| (0, 0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    let t = trials as f64;
    let product = (ha as f64 / t) * (lb as f64 / t);
    Ok(JointDeviation {
        trials,
        joint: both as f64 / t,
        product,
        se: (product * (1.0 - product) / t).sqrt(),
    })
}

/// Regrets of one policy at one (horizon, gap) point, one per seed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub policy: String,
    #[serde(rename = "T")]
    pub horizon: u64,
    pub delta: f64,
    pub seeds: Vec<u64>,
    pub regrets: Vec<f64>,
    pub herded: Vec<bool>,
    pub mean: f64,
    pub se: f64,
}

/// Runs `spec` on `instance` once per seed. The same seeds give the same tapes
/// under every policy, so cells sharing seeds are paired.
pub fn run_cell(
    spec: &PolicySpec,
    instance: &BanditInstance,
    cfg: &BehaviorConfig,
    seeds: &[u64],
    path_len: u64,
) -> Result<CellResult> {
    let policy = spec.build(instance.horizon(), path_len)?;
    let label = spec.label();
    let mut regrets = Vec::with_capacity(seeds.len());
    let mut herded = Vec::with_capacity(seeds.len());
    for r in run_batch(instance, &policy, &label, cfg, seeds) {
        let s = r?;
        regrets.push(s.regret);
        herded.push(s.herded);
    }
    let (mean, se) = mean_se(&regrets);
    Ok(CellResult {
        policy: label,
        horizon: instance.horizon(),
        delta: instance.gap(),
        seeds: seeds.to_vec(),
        regrets,
        herded,
        mean,
        se,
    })
}

/// Mean and standard error of the per-seed differences `b - a`.
pub fn paired_difference(a: &CellResult, b: &CellResult) -> Result<(f64, f64)> {
    if a.seeds != b.seeds {
        return Err(Error::contract("paired cells must share their seeds"));
    }
    let d: Vec<f64> = a
        .regrets
        .iter()
        .zip(&b.regrets)
        .map(|(x, y)| y - x)
        .collect();
    Ok(mean_se(&d))
}

/// One cell per (policy, horizon); grid must be sorted ascending.
pub fn regret_curve(
    specs: &[PolicySpec],
    instance: &InstanceConfig,
    horizons: &[u64],
    cfg: &BehaviorConfig,
    seeds: &[u64],
    path_len: u64,
) -> Result<Vec<CellResult>> {
    if horizons.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config("horizon grid must be strictly increasing"));
    }
    let mut out = Vec::new();
    for &t in horizons {
        let inst = instance.build(t, None)?;
        for spec in specs {
            out.push(run_cell(spec, &inst, cfg, seeds, path_len)?);
        }
    }
    Ok(out)
}

/// One cell per (policy, gap) at a fixed horizon, means `1/2 ± delta/2`.
pub fn gap_sweep(
    specs: &[PolicySpec],
    horizon: u64,
    deltas: &[f64],
    strict_model: bool,
    cfg: &BehaviorConfig,
    seeds: &[u64],
    path_len: u64,
) -> Result<Vec<CellResult>> {
    let mut out = Vec::new();
    for &d in deltas {
        let inst = BanditInstance::from_gap(d, horizon, strict_model)?;
        for spec in specs {
            let mut cell = run_cell(spec, &inst, cfg, seeds, path_len)?;
            cell.delta = d;
            out.push(cell);
        }
    }
    Ok(out)
}

/// Least-squares fit of `ln(mean regret)` against `ln T`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExponentFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual on the log scale.
    pub residual: f64,
    pub points_used: usize,
    /// Indices of points dropped for a nonpositive mean.
    pub excluded: Vec<usize>,
}

pub fn fit_exponent(points: &[(f64, f64)]) -> Result<ExponentFit> {
    let mut excluded = Vec::new();
    let mut xy = Vec::new();
    for (i, &(t, m)) in points.iter().enumerate() {
        if m > 0.0 && t > 0.0 && m.is_finite() {
            xy.push((t.ln(), m.ln()));
        } else {
            log::warn!("point {i} (T = {t}, mean = {m}) excluded from the exponent fit");
            excluded.push(i);
        }
    }
    if xy.len() < 3 {
        return Err(Error::config(format!(
            "exponent fit needs at least 3 positive points, got {}",
            xy.len()
        )));
    }
    let n = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / n;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = xy.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = xy.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::config(
            "exponent fit needs at least two distinct horizons",
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (xy
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(ExponentFit {
        slope,
        intercept,
        residual,
        points_used: xy.len(),
        excluded,
    })
}

/// Fits the exponent of each policy's cells in a horizon sweep.
pub fn fit_curves(cells: &[CellResult]) -> Vec<(String, Result<ExponentFit>)> {
    let mut names: Vec<String> = Vec::new();
    for c in cells {
        if !names.contains(&c.policy) {
            names.push(c.policy.clone());
        }
    }
    names
        .into_iter()
        .map(|p| {
            let pts: Vec<(f64, f64)> = cells
                .iter()
                .filter(|c| c.policy == p)
                .map(|c| (c.horizon as f64, c.mean))
                .collect();
            let fit = fit_exponent(&pts);
            (p, fit)
        })
        .collect()
}
