//! Agent estimate functions and arm choice.
//!
//! Every behavior sees only per-arm (count, sum) statistics of its anonymized
//! subhistory, so anonymity holds by construction. Randomized behaviors draw
//! their per-agent parameters from a seed, keeping each agent reproducible.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    anonymize, arm_stats, AnonymizedSubhistory, Arm, ArmStats, Outcome, Subhistory,
};
use crate::seeding::{derive_seed, TAG_FUZZ, TAG_TIES};

pub const DEFAULT_C_EST: f64 = 1.0 / 16.0;
pub const UNSEEN_FLOOR: f64 = 1.0 / 3.0;
pub const PROJECTION_LO: f64 = 1.0 / 3.0;
pub const PROJECTION_HI: f64 = 2.0 / 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorKind {
    EmpiricalMean,
    BandPerturbed,
    Optimistic,
    Pessimistic,
    BetaPosterior,
    AdversarialViolator,
}

impl BehaviorKind {
    pub const ALL: [BehaviorKind; 6] = [
        BehaviorKind::EmpiricalMean,
        BehaviorKind::BandPerturbed,
        BehaviorKind::Optimistic,
        BehaviorKind::Pessimistic,
        BehaviorKind::BetaPosterior,
        BehaviorKind::AdversarialViolator,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BehaviorKind::EmpiricalMean => "empirical_mean",
            BehaviorKind::BandPerturbed => "band_perturbed",
            BehaviorKind::Optimistic => "optimistic",
            BehaviorKind::Pessimistic => "pessimistic",
            BehaviorKind::BetaPosterior => "beta_posterior",
            BehaviorKind::AdversarialViolator => "adversarial_violator",
        }
    }
}

/// What an agent reports for an arm seen fewer than `n_est` times (but at least once).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmallSampleRule {
    #[default]
    Empirical,
    Unseen,
    UpperEdge,
    LowerEdge,
}

fn default_n_est() -> u64 {
    1
}
fn default_c_est() -> f64 {
    DEFAULT_C_EST
}
fn default_unseen() -> f64 {
    1.0
}
fn default_band_fraction() -> f64 {
    0.99
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehaviorConfig {
    pub kind: BehaviorKind,
    #[serde(default = "default_n_est")]
    pub n_est: u64,
    #[serde(default = "default_c_est")]
    pub c_est: f64,
    #[serde(default = "default_unseen")]
    pub unseen_estimate: f64,
    #[serde(default = "default_band_fraction")]
    pub band_fraction: f64,
    #[serde(default)]
    pub projection_mode: bool,
    /// Per-arm Beta prior `(alpha, beta)`. Empty means `(1, 1)` for every arm;
    /// a single pair applies to every arm.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub beta_params: Vec<(f64, f64)>,
    #[serde(default)]
    pub small_sample: SmallSampleRule,
    #[serde(default)]
    pub seed: u64,
}

impl BehaviorConfig {
    pub fn new(kind: BehaviorKind) -> Self {
        Self {
            kind,
            n_est: default_n_est(),
            c_est: DEFAULT_C_EST,
            unseen_estimate: default_unseen(),
            band_fraction: default_band_fraction(),
            projection_mode: false,
            beta_params: Vec::new(),
            small_sample: SmallSampleRule::Empirical,
            seed: 0,
        }
    }

    pub fn empirical() -> Self {
        Self::new(BehaviorKind::EmpiricalMean)
    }

    pub fn with_n_est(mut self, n_est: u64) -> Self {
        self.n_est = n_est;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_est < 1 {
            return Err(Error::config("n_est must be at least 1"));
        }
        if !(self.c_est > 0.0 && self.c_est < 1.0 / 3.0) {
            return Err(Error::config(format!(
                "c_est {} outside (0, 1/3)",
                self.c_est
            )));
        }
        let lo = if self.projection_mode {
            0.0
        } else {
            UNSEEN_FLOOR
        };
        if !(self.unseen_estimate >= lo && self.unseen_estimate <= 1.0) {
            return Err(Error::config(format!(
                "unseen_estimate {} outside [{lo:.4}, 1]",
                self.unseen_estimate
            )));
        }
        if !(self.band_fraction >= 0.0 && self.band_fraction < 1.0) {
            return Err(Error::config(format!(
                "band_fraction {} outside [0, 1)",
                self.band_fraction
            )));
        }
        for &(a, b) in &self.beta_params {
            if !(a.is_finite() && b.is_finite() && a > 0.0 && b > 0.0) {
                return Err(Error::config("beta_params must be positive"));
            }
        }
        Ok(())
    }

    /// Beta prior for `arm`.
    pub fn prior(&self, arm: Arm) -> (f64, f64) {
        match self.beta_params.len() {
            0 => (1.0, 1.0),
            1 => self.beta_params[0],
            n => self.beta_params[arm.min(n - 1)],
        }
    }

    /// The estimate function of the agent whose draw is `agent_draw`.
    pub fn draw(&self, agent_draw: u64, num_arms: usize) -> EstimateFunction<'_> {
        let noise = if self.kind == BehaviorKind::BandPerturbed {
            let mut rng = ChaCha8Rng::seed_from_u64(agent_draw);
            (0..num_arms)
                .map(|_| rng.random_range(-1.0..=1.0))
                .collect()
        } else {
            Vec::new()
        };
        let ties = self
            .projection_mode
            .then(|| ChaCha8Rng::seed_from_u64(derive_seed(&[TAG_TIES, agent_draw])));
        EstimateFunction {
            cfg: self,
            noise,
            ties,
        }
    }
}

/// One agent's estimate function.
#[derive(Debug, Clone)]
pub struct EstimateFunction<'a> {
    cfg: &'a BehaviorConfig,
    noise: Vec<f64>,
    ties: Option<ChaCha8Rng>,
}

impl EstimateFunction<'_> {
    /// Estimate for one arm from its pull count `n` and reward sum `s`.
    pub fn estimate_arm(&self, arm: Arm, n: u64, s: u64) -> f64 {
        let cfg = self.cfg;
        let raw = if n == 0 {
            match cfg.kind {
                BehaviorKind::BetaPosterior => {
                    let (a, b) = cfg.prior(arm);
                    a / (a + b)
                }
                BehaviorKind::AdversarialViolator => 0.0,
                _ => cfg.unseen_estimate,
            }
        } else {
            let mean = s as f64 / n as f64;
            let edge = cfg.band_fraction * cfg.c_est / (n as f64).sqrt();
            match cfg.kind {
                BehaviorKind::BetaPosterior => {
                    let (a, b) = cfg.prior(arm);
                    (s as f64 + a) / (n as f64 + a + b)
                }
                BehaviorKind::AdversarialViolator => {
                    let off = 2.0 * cfg.c_est / (n as f64).sqrt();
                    if mean - off >= 0.0 {
                        mean - off
                    } else {
                        mean + off
                    }
                }
                _ if n < cfg.n_est => match cfg.small_sample {
                    SmallSampleRule::Empirical => mean,
                    SmallSampleRule::Unseen => cfg.unseen_estimate,
                    SmallSampleRule::UpperEdge => mean + edge,
                    SmallSampleRule::LowerEdge => mean - edge,
                },
                BehaviorKind::EmpiricalMean => mean,
                BehaviorKind::BandPerturbed => {
                    mean + self.noise.get(arm).copied().unwrap_or(0.0) * edge
                }
                BehaviorKind::Optimistic => mean + edge,
                BehaviorKind::Pessimistic => mean - edge,
            }
        };
        let mut est = raw.clamp(0.0, 1.0);
        if est != raw {
            log::debug!("estimate {raw} for arm {arm} clamped to {est}");
        }
        if cfg.projection_mode {
            est = est.clamp(PROJECTION_LO, PROJECTION_HI);
        }
        est
    }

    /// Estimates from per-arm pull counts and reward sums.
    pub fn estimates_into(&self, counts: &[u64], sums: &[u64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            counts
                .iter()
                .zip(sums)
                .enumerate()
                .map(|(a, (&n, &s))| self.estimate_arm(a, n, s)),
        );
    }

    pub fn estimates(&self, stats: &ArmStats) -> Vec<f64> {
        let mut out = Vec::with_capacity(stats.num_arms());
        self.estimates_into(stats.counts(), stats.sums(), &mut out);
        out
    }

    /// Arm with the largest estimate. Ties go to the lowest index, or are broken
    /// uniformly at random in projection mode.
    pub fn choose(&mut self, estimates: &[f64]) -> Arm {
        let best = choose_arm(estimates);
        match self.ties.as_mut() {
            Some(rng) => {
                let top = estimates[best];
                let tied: Vec<Arm> = (0..estimates.len())
                    .filter(|&a| estimates[a] == top)
                    .collect();
                *tied.choose(rng).expect("non-empty")
            }
            None => best,
        }
    }
}

/// Estimates of the agent with draw `agent_draw` given the anonymized subhistory `m`.
pub fn estimate(
    cfg: &BehaviorConfig,
    agent_draw: u64,
    m: &AnonymizedSubhistory,
    num_arms: usize,
) -> Result<Vec<f64>> {
    let stats = m.stats(num_arms)?;
    Ok(cfg.draw(agent_draw, num_arms).estimates(&stats))
}

/// Index of the largest estimate; ties go to the lowest index.
pub fn choose_arm(estimates: &[f64]) -> Arm {
    let mut best = 0;
    for (a, &x) in estimates.iter().enumerate().skip(1) {
        if x > estimates[best] {
            best = a;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ComplianceCheck {
    Band,
    UnseenFloor,
    Range,
    Anonymity,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplianceViolation {
    pub check: ComplianceCheck,
    pub arm: Arm,
    pub n: u64,
    pub sum: u64,
    pub estimate: f64,
    pub reference: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplianceReport {
    pub kind: BehaviorKind,
    pub cases: u64,
    /// Total violations found; `violations` keeps the first few.
    pub violation_count: u64,
    pub violations: Vec<ComplianceViolation>,
}

impl ComplianceReport {
    pub fn is_compliant(&self) -> bool {
        self.violation_count == 0
    }
}

const MAX_REPORTED: usize = 50;
const ANONYMITY_CAP: u64 = 4096;
const SWEEP_MAX_N: u64 = 100_000;

struct Recorder {
    count: u64,
    list: Vec<ComplianceViolation>,
}

impl Recorder {
    fn push(&mut self, v: ComplianceViolation) {
        self.count += 1;
        if self.list.len() < MAX_REPORTED {
            self.list.push(v);
        }
    }
}

/// Checks the band, unseen floor, range and anonymity requirements on
/// `fuzz_rounds` random statistics. Posterior behaviors additionally get a
/// deterministic sweep over every `n` in `[n_est, 1e5]` at the extreme sums.
pub fn check_assumption_compliance(cfg: &BehaviorConfig, fuzz_rounds: u64) -> ComplianceReport {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[TAG_FUZZ, cfg.seed]));
    let mut rec = Recorder {
        count: 0,
        list: Vec::new(),
    };
    for _ in 0..fuzz_rounds {
        let k = rng.random_range(2..=4usize);
        let counts: Vec<u64> = (0..k).map(|_| fuzz_count(&mut rng, cfg.n_est)).collect();
        let sums: Vec<u64> = counts
            .iter()
            .map(|&n| match rng.random_range(0..10) {
                0 | 1 => 0,
                2 | 3 => n,
                _ => rng.random_range(0..=n),
            })
            .collect();
        let stats = ArmStats::from_counts(counts, sums).expect("sums bounded by counts");
        let agent = rng.random::<u64>();
        let f = cfg.draw(agent, k);
        let est = f.estimates(&stats);
        for a in 0..k {
            check_arm(cfg, a, stats.count(a), stats.sum(a), est[a], &mut rec);
        }
        if stats.total() <= ANONYMITY_CAP {
            let h1 = realize(&stats, &mut rng);
            let h2 = realize(&stats, &mut rng);
            let e1 = estimate(cfg, agent, &anonymize(&h1), k).expect("arms in range");
            let e2 = estimate(cfg, agent, &anonymize(&h2), k).expect("arms in range");
            for a in 0..k {
                if e1[a].to_bits() != e2[a].to_bits() || e1[a].to_bits() != est[a].to_bits() {
                    rec.push(ComplianceViolation {
                        check: ComplianceCheck::Anonymity,
                        arm: a,
                        n: stats.count(a),
                        sum: stats.sum(a),
                        estimate: e1[a],
                        reference: e2[a],
                        bound: 0.0,
                    });
                }
            }
        }
    }
    if cfg.kind == BehaviorKind::BetaPosterior {
        let f = cfg.draw(cfg.seed, 1);
        for n in cfg.n_est..=SWEEP_MAX_N.max(cfg.n_est) {
            for s in [0, n] {
                check_arm(cfg, 0, n, s, f.estimate_arm(0, n, s), &mut rec);
            }
        }
    }
    ComplianceReport {
        kind: cfg.kind,
        cases: fuzz_rounds,
        violation_count: rec.count,
        violations: rec.list,
    }
}

fn fuzz_count(rng: &mut ChaCha8Rng, n_est: u64) -> u64 {
    match rng.random_range(0..4) {
        0 => 0,
        1 => rng.random_range(1..=4 * n_est + 16),
        2 => n_est + rng.random_range(0..4),
        _ => (10f64.powf(rng.random_range(0.0..5.0))) as u64,
    }
}

fn check_arm(cfg: &BehaviorConfig, arm: Arm, n: u64, s: u64, est: f64, rec: &mut Recorder) {
    let viol = |check, reference, bound| ComplianceViolation {
        check,
        arm,
        n,
        sum: s,
        estimate: est,
        reference,
        bound,
    };
    if !(0.0..=1.0).contains(&est) {
        rec.push(viol(ComplianceCheck::Range, 0.0, 1.0));
    }
    if n == 0 {
        if est < UNSEEN_FLOOR {
            rec.push(viol(
                ComplianceCheck::UnseenFloor,
                UNSEEN_FLOOR,
                UNSEEN_FLOOR,
            ));
        }
    } else if n >= cfg.n_est {
        let mut reference = s as f64 / n as f64;
        if cfg.projection_mode {
            reference = reference.clamp(PROJECTION_LO, PROJECTION_HI);
        }
        let bound = cfg.c_est / (n as f64).sqrt();
        if (est - reference).abs() >= bound {
            rec.push(viol(ComplianceCheck::Band, reference, bound));
        }
    }
}

/// A shuffled subhistory whose per-arm statistics equal `stats`.
fn realize(stats: &ArmStats, rng: &mut ChaCha8Rng) -> Subhistory {
    let mut pairs = Vec::with_capacity(stats.total() as usize);
    for a in 0..stats.num_arms() {
        let (n, s) = (stats.count(a), stats.sum(a));
        pairs.extend((0..n).map(|i| (a, u8::from(i < s))));
    }
    pairs.shuffle(rng);
    let entries = pairs
        .into_iter()
        .enumerate()
        .map(|(i, (a, r))| Outcome::new(i as u64 + 1, a, r))
        .collect();
    Subhistory::new(entries).expect("rounds increase")
}

/// Whether sequential Bayesian updating over `h1` and over `h2` ends at the same
/// posterior means. The two histories must share per-arm counts and sums.
pub fn posterior_adaptive_invariance(
    beta_params: &[(f64, f64)],
    h1: &Subhistory,
    h2: &Subhistory,
    num_arms: usize,
) -> Result<bool> {
    let s1 = arm_stats(h1, num_arms)?;
    let s2 = arm_stats(h2, num_arms)?;
    if s1 != s2 {
        return Err(Error::contract(
            "histories differ in per-arm pull counts or reward sums",
        ));
    }
    let p1 = sequential_posterior_means(beta_params, h1, num_arms);
    let p2 = sequential_posterior_means(beta_params, h2, num_arms);
    Ok(p1.iter().zip(&p2).all(|(x, y)| x == y))
}

/// Posterior means after updating a Beta prior one outcome at a time.
pub fn sequential_posterior_means(
    beta_params: &[(f64, f64)],
    h: &Subhistory,
    num_arms: usize,
) -> Vec<f64> {
    let prior = |a: Arm| match beta_params.len() {
        0 => (1.0, 1.0),
        1 => beta_params[0],
        n => beta_params[a.min(n - 1)],
    };
    let mut post: Vec<(f64, f64)> = (0..num_arms).map(prior).collect();
    for o in h.entries() {
        let p = &mut post[o.arm];
        if o.reward == 1 {
            p.0 += 1.0;
        } else {
            p.1 += 1.0;
        }
    }
    post.iter().map(|(a, b)| a / (a + b)).collect()
}
