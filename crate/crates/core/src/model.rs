//! Ground-truth bandit instances, reward tapes, subhistories and per-arm statistics.
//!
//! Rewards are Bernoulli. The reward for the `j`-th pull of arm `a` is cell
//! `(a, j)` of a [`RewardTape`], whatever the policy that caused the pull.
//! Cells are addressable: each is derived from a counter-based ChaCha stream
//! keyed by `(seed, arm)` at word position `2(j-1)`, so a tape never needs
//! to be materialized unless an oracle wants the whole matrix.

use std::collections::BTreeMap;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::ToPrimitive;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Lower bound on mean rewards in the strict model.
pub const STRICT_MEAN_MIN: f64 = 1.0 / 3.0;
/// Upper bound on mean rewards in the strict model.
pub const STRICT_MEAN_MAX: f64 = 2.0 / 3.0;

// Slack for decimal inputs such as 0.5 + (1/3)/2 landing one ulp past 2/3.
const RANGE_SLACK: f64 = 1e-12;

pub type Arm = usize;
pub type Reward = u8;

/// A K-armed Bernoulli bandit with a fixed horizon.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BanditInstance {
    num_arms: usize,
    means: Vec<f64>,
    horizon: u64,
    #[serde(skip)]
    strict_model: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInstance {
    num_arms: usize,
    means: Vec<f64>,
    horizon: u64,
    #[serde(default = "default_strict")]
    strict_model: bool,
}

fn default_strict() -> bool {
    true
}

impl<'de> Deserialize<'de> for BanditInstance {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = RawInstance::deserialize(d)?;
        if raw.num_arms != raw.means.len() {
            return Err(serde::de::Error::custom(format!(
                "num_arms = {} but {} means given",
                raw.num_arms,
                raw.means.len()
            )));
        }
        BanditInstance::with_model(raw.means, raw.horizon, raw.strict_model)
            .map_err(serde::de::Error::custom)
    }
}

impl BanditInstance {
    /// Builds an instance under the strict model (`means` in `[1/3, 2/3]`).
    pub fn new(means: Vec<f64>, horizon: u64) -> Result<Self> {
        Self::with_model(means, horizon, true)
    }

    /// Builds an instance; with `strict_model = false` means may lie anywhere in `[0, 1]`.
    pub fn with_model(means: Vec<f64>, horizon: u64, strict_model: bool) -> Result<Self> {
        if means.len() < 2 {
            return Err(Error::config(format!(
                "need at least 2 arms, got {}",
                means.len()
            )));
        }
        if horizon < 1 {
            return Err(Error::config("horizon must be at least 1"));
        }
        let (lo, hi) = if strict_model {
            (STRICT_MEAN_MIN, STRICT_MEAN_MAX)
        } else {
            (0.0, 1.0)
        };
        for (a, &m) in means.iter().enumerate() {
            if !m.is_finite() || m < lo - RANGE_SLACK || m > hi + RANGE_SLACK {
                return Err(Error::config(format!(
                    "mean of arm {a} = {m} outside [{lo:.6}, {hi:.6}]{}",
                    if strict_model { " (strict model)" } else { "" }
                )));
            }
        }
        Ok(Self {
            num_arms: means.len(),
            means,
            horizon,
            strict_model,
        })
    }

    /// Two-armed instance with means `(1/2 + delta/2, 1/2 - delta/2)`.
    pub fn from_gap(delta: f64, horizon: u64, strict_model: bool) -> Result<Self> {
        if !(0.0..=1.0).contains(&delta) {
            return Err(Error::config(format!("gap {delta} outside [0, 1]")));
        }
        Self::with_model(
            vec![0.5 + delta / 2.0, 0.5 - delta / 2.0],
            horizon,
            strict_model,
        )
    }

    pub fn num_arms(&self) -> usize {
        self.num_arms
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn mean(&self, arm: Arm) -> f64 {
        self.means[arm]
    }

    pub fn horizon(&self) -> u64 {
        self.horizon
    }

    pub fn is_strict(&self) -> bool {
        self.strict_model
    }

    /// Same means, different horizon.
    pub fn with_horizon(&self, horizon: u64) -> Result<Self> {
        Self::with_model(self.means.clone(), horizon, self.strict_model)
    }

    pub fn best_mean(&self) -> f64 {
        self.means.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Lowest-indexed arm with the largest mean.
    pub fn best_arm(&self) -> Arm {
        let best = self.best_mean();
        self.means.iter().position(|&m| m == best).unwrap_or(0)
    }

    /// Lowest-indexed arm with the smallest mean.
    pub fn worst_arm(&self) -> Arm {
        let worst = self.means.iter().copied().fold(f64::INFINITY, f64::min);
        self.means.iter().position(|&m| m == worst).unwrap_or(0)
    }

    pub fn is_optimal(&self, arm: Arm) -> bool {
        self.means[arm] == self.best_mean()
    }

    /// Best mean minus the largest mean strictly below it; 0 when all arms tie.
    pub fn gap(&self) -> f64 {
        let best = self.best_mean();
        self.means
            .iter()
            .copied()
            .filter(|&m| m < best)
            .fold(None, |acc: Option<f64>, m| {
                Some(acc.map_or(m, |x| x.max(m)))
            })
            .map_or(0.0, |second| {
                (decimal_rational(best) - decimal_rational(second))
                    .to_f64()
                    .expect("finite gap")
            })
    }

    /// Content hash over `(K, T, means)`; means serialized with 17 significant digits.
    pub fn digest(&self) -> String {
        let means: Vec<String> = self.means.iter().map(|m| format!("{m:.16e}")).collect();
        let text = format!(
            "K={};T={};means={}",
            self.num_arms,
            self.horizon,
            means.join(",")
        );
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// The exact value of the shortest decimal that prints as `x`, so that
/// `0.55 - 0.45` is exactly `1/10`.
pub(crate) fn decimal_rational(x: f64) -> BigRational {
    let s = format!("{x}");
    let (int, frac) = s.split_once('.').unwrap_or((&s, ""));
    let digits = BigInt::from_str(&format!("{int}{frac}")).expect("finite decimal");
    BigRational::new(digits, BigInt::from(10u32).pow(frac.len() as u32))
}

/// One agent's outcome: round (1-based), chosen arm, realized reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Outcome {
    pub round: u64,
    pub arm: Arm,
    pub reward: Reward,
}

impl Outcome {
    pub fn new(round: u64, arm: Arm, reward: Reward) -> Self {
        Self { round, arm, reward }
    }
}

/// Outcomes for a set of rounds, kept in strictly increasing round order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Subhistory {
    entries: Vec<Outcome>,
}

impl Subhistory {
    pub fn new(entries: Vec<Outcome>) -> Result<Self> {
        if let Some(w) = entries.windows(2).find(|w| w[0].round >= w[1].round) {
            return Err(Error::contract(format!(
                "subhistory rounds must be strictly increasing ({} then {})",
                w[0].round, w[1].round
            )));
        }
        Ok(Self { entries })
    }

    /// Sorts by round first; rejects duplicate rounds.
    pub fn from_unordered(mut entries: Vec<Outcome>) -> Result<Self> {
        entries.sort_by_key(|o| o.round);
        Self::new(entries)
    }

    pub fn entries(&self) -> &[Outcome] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Multiset of `(arm, reward)` pairs: a subhistory with round indices dropped.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct AnonymizedSubhistory {
    counts: BTreeMap<(Arm, Reward), u64>,
}

impl AnonymizedSubhistory {
    pub fn from_pairs<I: IntoIterator<Item = (Arm, Reward)>>(pairs: I) -> Self {
        let mut counts = BTreeMap::new();
        for p in pairs {
            *counts.entry(p).or_insert(0) += 1;
        }
        Self { counts }
    }

    /// Builds the multiset directly from per-arm sufficient statistics.
    pub fn from_stats(stats: &ArmStats) -> Self {
        let mut counts = BTreeMap::new();
        for a in 0..stats.num_arms() {
            let (n, s) = (stats.count(a), stats.sum(a));
            if s > 0 {
                counts.insert((a, 1), s);
            }
            if n > s {
                counts.insert((a, 0), n - s);
            }
        }
        Self { counts }
    }

    pub fn multiplicity(&self, arm: Arm, reward: Reward) -> u64 {
        self.counts.get(&(arm, reward)).copied().unwrap_or(0)
    }

    pub fn len(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = ((Arm, Reward), u64)> + '_ {
        self.counts.iter().map(|(&k, &v)| (k, v))
    }

    /// Per-arm statistics of the multiset.
    pub fn stats(&self, num_arms: usize) -> Result<ArmStats> {
        let mut stats = ArmStats::empty(num_arms);
        for (&(arm, reward), &mult) in &self.counts {
            if arm >= num_arms {
                return Err(Error::Range {
                    what: "arm",
                    value: arm as u64,
                    limit: num_arms as u64,
                });
            }
            stats.add_many(arm, mult, if reward != 0 { mult } else { 0 });
        }
        Ok(stats)
    }
}

/// Drops round indices, keeping the multiplicity of each `(arm, reward)`.
pub fn anonymize(h: &Subhistory) -> AnonymizedSubhistory {
    AnonymizedSubhistory::from_pairs(h.entries.iter().map(|o| (o.arm, o.reward)))
}

/// Per-arm pull counts and integer reward sums.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ArmStats {
    counts: Vec<u64>,
    sums: Vec<u64>,
}

impl ArmStats {
    pub fn empty(num_arms: usize) -> Self {
        Self {
            counts: vec![0; num_arms],
            sums: vec![0; num_arms],
        }
    }

    /// Builds from parallel `(count, sum)` vectors; each sum must not exceed its count.
    pub fn from_counts(counts: Vec<u64>, sums: Vec<u64>) -> Result<Self> {
        if counts.len() != sums.len() {
            return Err(Error::contract("counts and sums differ in length"));
        }
        if let Some(a) = (0..counts.len()).find(|&a| sums[a] > counts[a]) {
            return Err(Error::contract(format!(
                "arm {a}: reward sum {} exceeds pull count {}",
                sums[a], counts[a]
            )));
        }
        Ok(Self { counts, sums })
    }

    pub fn num_arms(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, arm: Arm) -> u64 {
        self.counts[arm]
    }

    pub fn sum(&self, arm: Arm) -> u64 {
        self.sums[arm]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn sums(&self) -> &[u64] {
        &self.sums
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `None` when the arm has no samples.
    pub fn empirical_mean(&self, arm: Arm) -> Option<f64> {
        match self.counts[arm] {
            0 => None,
            n => Some(self.sums[arm] as f64 / n as f64),
        }
    }

    pub fn add(&mut self, arm: Arm, reward: Reward) {
        self.add_many(arm, 1, u64::from(reward != 0));
    }

    pub(crate) fn add_many(&mut self, arm: Arm, count: u64, sum: u64) {
        self.counts[arm] += count;
        self.sums[arm] += sum;
    }
}

/// Exact per-arm counting over a subhistory.
pub fn arm_stats(h: &Subhistory, num_arms: usize) -> Result<ArmStats> {
    let mut stats = ArmStats::empty(num_arms);
    for o in &h.entries {
        if o.arm >= num_arms {
            return Err(Error::Range {
                what: "arm",
                value: o.arm as u64,
                limit: num_arms as u64,
            });
        }
        stats.add(o.arm, o.reward);
    }
    Ok(stats)
}

/// Uniform draw in `[0, 1)` from 53 random bits.
#[inline]
pub(crate) fn unit_f64(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn arm_stream(seed: u64, arm: Arm) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(arm as u64);
    rng
}

/// Pre-drawn Bernoulli rewards: cell `(a, j)` is the reward of the `j`-th pull of arm `a`.
///
/// Cells compare a uniform draw keyed by `(seed, a, j)` against `mu_a`, so two
/// instances sharing a seed get monotonically coupled tapes.
#[derive(Debug, Clone)]
pub struct RewardTape {
    seed: u64,
    instance_digest: String,
    means: Vec<f64>,
    horizon: u64,
    rows: Option<Vec<Vec<Reward>>>,
}

impl RewardTape {
    /// Streamed tape; nothing is materialized.
    pub fn new(seed: u64, instance: &BanditInstance) -> Self {
        Self {
            seed,
            instance_digest: instance.digest(),
            means: instance.means().to_vec(),
            horizon: instance.horizon(),
            rows: None,
        }
    }

    /// Hand-specified tape (one row of length `T` per arm); seed is recorded as 0.
    pub fn from_rows(instance: &BanditInstance, rows: Vec<Vec<Reward>>) -> Result<Self> {
        if rows.len() != instance.num_arms() {
            return Err(Error::contract(format!(
                "tape has {} rows for {} arms",
                rows.len(),
                instance.num_arms()
            )));
        }
        if let Some(r) = rows.iter().find(|r| r.len() as u64 != instance.horizon()) {
            return Err(Error::contract(format!(
                "tape row of length {} for horizon {}",
                r.len(),
                instance.horizon()
            )));
        }
        if rows.iter().flatten().any(|&x| x > 1) {
            return Err(Error::contract("tape cells must be 0 or 1"));
        }
        Ok(Self {
            seed: 0,
            instance_digest: instance.digest(),
            means: instance.means().to_vec(),
            horizon: instance.horizon(),
            rows: Some(rows),
        })
    }

    /// Regenerates the tape for `(seed, instance)` and materializes the full matrix.
    pub fn materialized(seed: u64, instance: &BanditInstance) -> Self {
        let mut tape = Self::new(seed, instance);
        tape.rows = Some(tape.draws());
        tape
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn instance_digest(&self) -> &str {
        &self.instance_digest
    }

    pub fn num_arms(&self) -> usize {
        self.means.len()
    }

    pub fn horizon(&self) -> u64 {
        self.horizon
    }

    pub fn is_materialized(&self) -> bool {
        self.rows.is_some()
    }

    /// The full `K x T` matrix.
    pub fn draws(&self) -> Vec<Vec<Reward>> {
        if let Some(rows) = &self.rows {
            return rows.clone();
        }
        (0..self.num_arms())
            .map(|a| {
                let mut rng = arm_stream(self.seed, a);
                let p = self.means[a];
                (0..self.horizon)
                    .map(|_| Reward::from(unit_f64(rng.next_u64()) < p))
                    .collect()
            })
            .collect()
    }

    /// Reward of the `pull_index`-th (1-based) pull of `arm`.
    pub fn reward(&self, arm: Arm, pull_index: u64) -> Result<Reward> {
        if arm >= self.num_arms() {
            return Err(Error::Range {
                what: "arm",
                value: arm as u64,
                limit: self.num_arms() as u64,
            });
        }
        if pull_index < 1 || pull_index > self.horizon {
            return Err(Error::Range {
                what: "pull_index",
                value: pull_index,
                limit: self.horizon,
            });
        }
        if let Some(rows) = &self.rows {
            return Ok(rows[arm][(pull_index - 1) as usize]);
        }
        let mut rng = arm_stream(self.seed, arm);
        rng.set_word_pos(2 * u128::from(pull_index - 1));
        Ok(Reward::from(unit_f64(rng.next_u64()) < self.means[arm]))
    }

    /// Sequential reader handing out cells `(a, 1), (a, 2), ...` per arm.
    pub fn cursor(&self) -> TapeCursor<'_> {
        TapeCursor {
            tape: self,
            next: vec![1; self.num_arms()],
            streams: if self.rows.is_some() {
                Vec::new()
            } else {
                (0..self.num_arms())
                    .map(|a| arm_stream(self.seed, a))
                    .collect()
            },
        }
    }
}

/// See [`RewardTape::cursor`].
pub struct TapeCursor<'a> {
    tape: &'a RewardTape,
    next: Vec<u64>,
    streams: Vec<ChaCha8Rng>,
}

impl TapeCursor<'_> {
    /// Consumes the next cell of `arm`'s row.
    pub fn pull(&mut self, arm: Arm) -> Result<Reward> {
        let j = self.next[arm];
        if j > self.tape.horizon {
            return Err(Error::Range {
                what: "pull_index",
                value: j,
                limit: self.tape.horizon,
            });
        }
        self.next[arm] += 1;
        match &self.tape.rows {
            Some(rows) => Ok(rows[arm][(j - 1) as usize]),
            None => Ok(Reward::from(
                unit_f64(self.streams[arm].next_u64()) < self.tape.means[arm],
            )),
        }
    }

    /// Pulls consumed so far per arm.
    pub fn pulls(&self) -> Vec<u64> {
        self.next.iter().map(|j| j - 1).collect()
    }
}

/// Cell `(arm, pull_index)` of `tape`.
pub fn tape_reward(tape: &RewardTape, arm: Arm, pull_index: u64) -> Result<Reward> {
    tape.reward(arm, pull_index)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(means: &[f64], t: u64) -> BanditInstance {
        BanditInstance::new(means.to_vec(), t).unwrap()
    }

    #[test]
    fn strict_range_enforced() {
        assert!(BanditInstance::new(vec![0.2, 0.5], 10).is_err());
        assert!(BanditInstance::with_model(vec![0.2, 0.5], 10, false).is_ok());
        assert!(BanditInstance::new(vec![0.5], 10).is_err());
        assert!(BanditInstance::new(vec![0.5, 0.5], 0).is_err());
        assert!(BanditInstance::from_gap(1.0 / 3.0, 10, true).is_ok());
        assert!(BanditInstance::from_gap(0.4, 10, true).is_err());
    }

    #[test]
    fn instance_file_schema() {
        let i: BanditInstance =
            serde_json::from_str(r#"{"num_arms":2,"means":[0.6,0.4],"horizon":10}"#).unwrap();
        assert_eq!(i.means(), &[0.6, 0.4]);
        assert!(serde_json::from_str::<BanditInstance>(
            r#"{"num_arms":3,"means":[0.6,0.4],"horizon":10}"#
        )
        .is_err());
    }

    #[test]
    fn gap_and_digest() {
        let i = inst(&[0.6, 0.4, 0.55], 10);
        assert!((i.gap() - 0.05).abs() < 1e-15);
        assert_eq!(inst(&[0.5, 0.5], 3).gap(), 0.0);
        assert_eq!(i.digest(), inst(&[0.6, 0.4, 0.55], 10).digest());
        assert_ne!(i.digest(), inst(&[0.6, 0.4, 0.55], 11).digest());
        assert_ne!(
            i.digest(),
            inst(&[0.6, 0.4, 0.5500000000000001], 10).digest()
        );
    }

    #[test]
    fn zero_row_tape() {
        let i = inst(&[0.5, 0.5], 4);
        let tape = RewardTape::from_rows(&i, vec![vec![1, 0, 1, 1], vec![0; 4]]).unwrap();
        for j in 1..=4 {
            assert_eq!(tape.reward(1, j).unwrap(), 0);
        }
        assert!(tape.reward(1, 5).is_err());
        assert!(tape.reward(1, 0).is_err());
        assert!(tape.reward(2, 1).is_err());
    }

    #[test]
    fn tape_is_deterministic_and_cursor_agrees() {
        let i = inst(&[0.5, 0.4], 500);
        let tape = RewardTape::new(42, &i);
        let again = RewardTape::new(42, &i);
        assert_eq!(tape.reward(1, 17).unwrap(), again.reward(1, 17).unwrap());
        let rows = tape.draws();
        assert_eq!(rows, RewardTape::materialized(42, &i).draws());
        let mut cur = tape.cursor();
        for j in 1..=500u64 {
            for a in 0..2 {
                let r = cur.pull(a).unwrap();
                assert_eq!(r, rows[a][(j - 1) as usize]);
                assert_eq!(r, tape.reward(a, j).unwrap());
            }
        }
        assert!(cur.pull(0).is_err());
        assert_ne!(rows, RewardTape::new(43, &i).draws());
    }

    #[test]
    fn tape_row_mean_law_of_large_numbers() {
        let i = inst(&[0.5, 0.5], 100_000);
        let rows = RewardTape::new(7, &i).draws();
        let mean = rows[1].iter().map(|&x| f64::from(x)).sum::<f64>() / 100_000.0;
        assert!((mean - 0.5).abs() < 0.01, "row mean {mean}");
    }

    #[test]
    fn coupled_across_instances() {
        // Same seed: raising a mean can only turn 0-cells into 1-cells.
        let lo = RewardTape::new(9, &inst(&[0.4, 0.5], 300)).draws();
        let hi = RewardTape::new(9, &inst(&[0.6, 0.5], 300)).draws();
        assert!(lo[0].iter().zip(&hi[0]).all(|(l, h)| l <= h));
        assert_eq!(lo[1], hi[1]);
    }

    #[test]
    fn anonymize_examples() {
        assert!(anonymize(&Subhistory::default()).is_empty());
        let h = Subhistory::new(vec![Outcome::new(1, 1, 0), Outcome::new(2, 1, 0)]).unwrap();
        let m = anonymize(&h);
        assert_eq!(m.multiplicity(1, 0), 2);
        assert_eq!(m.len(), 2);
        let p = Subhistory::new(vec![
            Outcome::new(3, 0, 1),
            Outcome::new(5, 1, 0),
            Outcome::new(9, 0, 0),
        ])
        .unwrap();
        let q = Subhistory::new(vec![
            Outcome::new(1, 0, 0),
            Outcome::new(2, 0, 1),
            Outcome::new(4, 1, 0),
        ])
        .unwrap();
        assert_eq!(anonymize(&p), anonymize(&q));
    }

    #[test]
    fn subhistory_requires_increasing_rounds() {
        assert!(Subhistory::new(vec![Outcome::new(2, 0, 1), Outcome::new(2, 1, 0)]).is_err());
        assert!(Subhistory::new(vec![Outcome::new(3, 0, 1), Outcome::new(2, 1, 0)]).is_err());
        assert!(
            Subhistory::from_unordered(vec![Outcome::new(3, 0, 1), Outcome::new(2, 1, 0)]).is_ok()
        );
    }

    #[test]
    fn arm_stats_examples() {
        let h = Subhistory::new(vec![Outcome::new(1, 0, 1), Outcome::new(2, 0, 0)]).unwrap();
        let s = arm_stats(&h, 2).unwrap();
        assert_eq!(s.count(0), 2);
        assert_eq!(s.empirical_mean(0), Some(0.5));
        assert_eq!(s.empirical_mean(1), None);
        let e = arm_stats(&Subhistory::default(), 3).unwrap();
        assert!((0..3).all(|a| e.count(a) == 0 && e.empirical_mean(a).is_none()));
        assert!(arm_stats(&h, 0).is_err());
        let m = anonymize(&h);
        assert_eq!(m.stats(2).unwrap(), s);
        assert_eq!(AnonymizedSubhistory::from_stats(&s), m);
    }
}
