//! Runs a disclosure policy against a population of agents.
//!
//! Agents arrive in round order. Agent `t` sees per-arm statistics of the rounds
//! in `S_t`, which the engine assembles from prefix sums: a block's fixed
//! observed set is summed once at the block start, and chain members add the
//! running prefix of their own block. Rewards come from a tape, so the `j`-th
//! pull of an arm receives the same reward under every policy.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::behavior::BehaviorConfig;
use crate::error::{Error, Result};
use crate::graph::InfoGraph;
use crate::model::{
    anonymize, arm_stats, decimal_rational, Arm, ArmStats, BanditInstance, Outcome, RewardTape,
    Subhistory,
};
use crate::seeding::{derive_seed, TAG_AGENT};

/// Which arm a constant policy pulls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantArm {
    Best,
    Worst,
    Index(Arm),
}

impl ConstantArm {
    pub fn resolve(self, instance: &BanditInstance) -> Result<Arm> {
        match self {
            ConstantArm::Best => Ok(instance.best_arm()),
            ConstantArm::Worst => Ok(instance.worst_arm()),
            ConstantArm::Index(a) if a < instance.num_arms() => Ok(a),
            ConstantArm::Index(a) => Err(Error::Range {
                what: "arm",
                value: a as u64,
                limit: instance.num_arms() as u64,
            }),
        }
    }
}

/// What decides each round's arm.
#[derive(Debug, Clone)]
pub enum Policy {
    /// Agents choose greedily from the subhistory the graph discloses to them.
    Graph(InfoGraph),
    /// Every round pulls one fixed arm; a reference point for the harness.
    Constant(ConstantArm),
}

impl Policy {
    fn digest_into(&self, h: &mut Sha256) {
        match self {
            Policy::Graph(g) => {
                h.update(format!("graph T={};", g.horizon()));
                for b in g.blocks() {
                    h.update(format!(
                        "[{},{},{}:{:?}]",
                        b.start,
                        b.end,
                        b.chain,
                        b.observed.spans()
                    ));
                }
            }
            Policy::Constant(c) => h.update(format!("constant {c:?}")),
        }
    }
}

/// One run's full record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimTrace {
    pub outcomes: Vec<Outcome>,
    pub pulls_per_arm: Vec<u64>,
    pub regret: f64,
    pub config_digest: String,
    pub seed: u64,
    pub means: Vec<f64>,
}

impl SimTrace {
    pub fn arms(&self) -> Vec<Arm> {
        self.outcomes.iter().map(|o| o.arm).collect()
    }
}

/// Digest of everything that determines a run except the tape seed.
pub fn config_digest(instance: &BanditInstance, policy: &Policy, cfg: &BehaviorConfig) -> String {
    let mut h = Sha256::new();
    h.update(instance.digest());
    h.update(serde_json::to_string(cfg).expect("behavior config serializes"));
    policy.digest_into(&mut h);
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Recompute every agent's subhistory from scratch and compare; `O(T^2)`.
    pub check_subhistories: bool,
    /// Validate transitivity before running.
    pub validate_graph: bool,
}

/// Runs `graph` on a fresh tape drawn with `tape_seed`.
pub fn run(
    instance: &BanditInstance,
    graph: &InfoGraph,
    cfg: &BehaviorConfig,
    tape_seed: u64,
) -> Result<SimTrace> {
    let tape = RewardTape::new(tape_seed, instance);
    run_on_tape(
        instance,
        &Policy::Graph(graph.clone()),
        cfg,
        &tape,
        RunOptions::default(),
    )
}

/// Like [`run`], but rejects graphs that are not transitive.
pub fn run_checked(
    instance: &BanditInstance,
    graph: &InfoGraph,
    cfg: &BehaviorConfig,
    tape_seed: u64,
) -> Result<SimTrace> {
    let tape = RewardTape::new(tape_seed, instance);
    let opts = RunOptions {
        validate_graph: true,
        ..Default::default()
    };
    run_on_tape(instance, &Policy::Graph(graph.clone()), cfg, &tape, opts)
}

pub fn run_on_tape(
    instance: &BanditInstance,
    policy: &Policy,
    cfg: &BehaviorConfig,
    tape: &RewardTape,
    opts: RunOptions,
) -> Result<SimTrace> {
    let horizon = instance.horizon();
    if tape.horizon() != horizon || tape.num_arms() != instance.num_arms() {
        return Err(Error::contract(format!(
            "tape is {}x{} but the instance has {} arms and horizon {horizon}",
            tape.num_arms(),
            tape.horizon(),
            instance.num_arms()
        )));
    }
    if tape.instance_digest() != instance.digest() {
        return Err(Error::contract("tape was drawn for a different instance"));
    }
    let outcomes = match policy {
        Policy::Constant(c) => {
            let arm = c.resolve(instance)?;
            let mut cur = tape.cursor();
            (1..=horizon)
                .map(|t| Ok(Outcome::new(t, arm, cur.pull(arm)?)))
                .collect::<Result<Vec<_>>>()?
        }
        Policy::Graph(g) => {
            if g.horizon() != horizon {
                return Err(Error::contract(format!(
                    "graph horizon {} differs from instance horizon {horizon}",
                    g.horizon()
                )));
            }
            if opts.validate_graph {
                let v = crate::graph::validate_transitive(g);
                if let Some(first) = v.first() {
                    return Err(Error::contract(format!(
                        "graph is not transitive: round {} is seen by {} but {} is not ({} violations)",
                        first.t,
                        first.t_prime,
                        first.witness,
                        v.len()
                    )));
                }
            }
            cfg.validate()?;
            play(instance, g, cfg, tape, opts.check_subhistories)?
        }
    };
    let mut pulls = vec![0u64; instance.num_arms()];
    for o in &outcomes {
        pulls[o.arm] += 1;
    }
    Ok(SimTrace {
        regret: regret_from_pulls(&pulls, instance),
        pulls_per_arm: pulls,
        outcomes,
        config_digest: config_digest(instance, policy, cfg),
        seed: tape.seed(),
        means: instance.means().to_vec(),
    })
}

/// Seed of agent `t`'s estimate function in the run on tape `tape_seed`.
pub fn agent_draw(cfg: &BehaviorConfig, tape_seed: u64, t: u64) -> u64 {
    derive_seed(&[TAG_AGENT, cfg.seed, tape_seed, t])
}

fn play(
    instance: &BanditInstance,
    g: &InfoGraph,
    cfg: &BehaviorConfig,
    tape: &RewardTape,
    check: bool,
) -> Result<Vec<Outcome>> {
    let k = instance.num_arms();
    let horizon = g.horizon() as usize;
    // prefix[t*k + a]: pulls / reward sum of arm a over rounds 1..=t
    let mut pc = vec![0u64; (horizon + 1) * k];
    let mut ps = vec![0u64; (horizon + 1) * k];
    let mut cur = tape.cursor();
    let mut outcomes = Vec::with_capacity(horizon);
    let (mut base_c, mut base_s) = (vec![0u64; k], vec![0u64; k]);
    let (mut cnt, mut sum) = (vec![0u64; k], vec![0u64; k]);
    let mut est = Vec::with_capacity(k);
    for b in g.blocks() {
        base_c.fill(0);
        base_s.fill(0);
        for &(lo, hi) in b.observed.spans() {
            let (lo, hi) = ((lo - 1) as usize * k, hi as usize * k);
            for a in 0..k {
                base_c[a] += pc[hi + a] - pc[lo + a];
                base_s[a] += ps[hi + a] - ps[lo + a];
            }
        }
        let origin = (b.start - 1) as usize * k;
        for t in b.start..=b.end {
            let prev = (t - 1) as usize * k;
            cnt.copy_from_slice(&base_c);
            sum.copy_from_slice(&base_s);
            if b.chain {
                for a in 0..k {
                    cnt[a] += pc[prev + a] - pc[origin + a];
                    sum[a] += ps[prev + a] - ps[origin + a];
                }
            }
            if check {
                cross_check(g, &outcomes, t, k, &cnt, &sum)?;
            }
            let mut f = cfg.draw(agent_draw(cfg, tape.seed(), t), k);
            f.estimates_into(&cnt, &sum, &mut est);
            let arm = f.choose(&est);
            let reward = cur.pull(arm)?;
            outcomes.push(Outcome::new(t, arm, reward));
            let here = t as usize * k;
            pc.copy_within(prev..prev + k, here);
            ps.copy_within(prev..prev + k, here);
            pc[here + arm] += 1;
            ps[here + arm] += reward as u64;
        }
    }
    Ok(outcomes)
}

/// Rebuilds agent `t`'s anonymized subhistory from the raw outcomes.
fn cross_check(
    g: &InfoGraph,
    outcomes: &[Outcome],
    t: u64,
    k: usize,
    cnt: &[u64],
    sum: &[u64],
) -> Result<()> {
    let seen = g.observed(t).unwrap_or_default();
    let entries: Vec<Outcome> = seen.iter().map(|r| outcomes[(r - 1) as usize]).collect();
    let slow = anonymize(&Subhistory::new(entries)?).stats(k)?;
    let fast = ArmStats::from_counts(cnt.to_vec(), sum.to_vec())?;
    if slow != fast {
        return Err(Error::contract(format!(
            "round {t}: assembled statistics {fast:?} differ from its subhistory {slow:?}"
        )));
    }
    Ok(())
}

fn regret_from_pulls(pulls: &[u64], instance: &BanditInstance) -> f64 {
    let means: Vec<BigRational> = instance
        .means()
        .iter()
        .map(|&m| decimal_rational(m))
        .collect();
    let best = means.iter().max().expect("at least one arm").clone();
    let mut total = BigRational::zero();
    for (a, &n) in pulls.iter().enumerate() {
        total += (&best - &means[a]) * BigRational::from_integer(BigInt::from(n));
    }
    total.to_f64().expect("finite regret")
}

/// `sum_t (max_a mu_a - mu_{a_t})`, summed exactly over the decimal means.
pub fn regret_of(arms: &[Arm], instance: &BanditInstance) -> Result<f64> {
    let mut pulls = vec![0u64; instance.num_arms()];
    for &a in arms {
        if a >= pulls.len() {
            return Err(Error::Range {
                what: "arm",
                value: a as u64,
                limit: pulls.len() as u64,
            });
        }
        pulls[a] += 1;
    }
    Ok(regret_from_pulls(&pulls, instance))
}

/// Whether the last `ceil(tail_fraction * T)` rounds all pull one suboptimal arm.
/// Fractions outside `(0, 1]` are clamped into it.
pub fn herding_indicator(trace: &SimTrace, tail_fraction: f64) -> bool {
    let horizon = trace.outcomes.len();
    if horizon == 0 {
        return false;
    }
    let f = if tail_fraction.is_nan() {
        1.0
    } else {
        tail_fraction.clamp(f64::MIN_POSITIVE, 1.0)
    };
    let tail = ((f * horizon as f64).ceil() as usize).clamp(1, horizon);
    let arm = trace.outcomes[horizon - tail].arm;
    let best = trace
        .means
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    trace.means[arm] < best
        && trace.outcomes[horizon - tail..]
            .iter()
            .all(|o| o.arm == arm)
}

pub const DEFAULT_HERDING_TAIL: f64 = 0.25;

/// The compact record of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub policy: String,
    #[serde(rename = "T")]
    pub horizon: u64,
    pub seed: u64,
    pub regret: f64,
    pub pulls: Vec<u64>,
    pub herded: bool,
    pub config_digest: String,
}

impl TraceSummary {
    pub fn of(policy: &str, trace: &SimTrace) -> Self {
        Self {
            policy: policy.to_string(),
            horizon: trace.outcomes.len() as u64,
            seed: trace.seed,
            regret: trace.regret,
            pulls: trace.pulls_per_arm.clone(),
            herded: herding_indicator(trace, DEFAULT_HERDING_TAIL),
            config_digest: trace.config_digest.clone(),
        }
    }
}

/// Runs one tape per seed, in parallel, and returns results in seed order.
/// A failing seed yields its error without stopping the others.
pub fn run_batch(
    instance: &BanditInstance,
    policy: &Policy,
    policy_name: &str,
    cfg: &BehaviorConfig,
    seeds: &[u64],
) -> Vec<Result<TraceSummary>> {
    seeds
        .par_iter()
        .map(|&seed| {
            let tape = RewardTape::new(seed, instance);
            run_on_tape(instance, policy, cfg, &tape, RunOptions::default())
                .map(|tr| TraceSummary::of(policy_name, &tr))
        })
        .collect()
}

/// Mean and standard error (sample std / sqrt(n)); SE is 0 for fewer than two values.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Per-arm statistics an agent at round `t` would see, recomputed from outcomes.
pub fn observed_stats(
    g: &InfoGraph,
    outcomes: &[Outcome],
    t: u64,
    num_arms: usize,
) -> Result<ArmStats> {
    let seen = g.observed(t).ok_or(Error::Range {
        what: "round",
        value: t,
        limit: g.horizon(),
    })?;
    let entries: Vec<Outcome> = seen
        .iter()
        .map(|r| {
            outcomes.get((r - 1) as usize).copied().ok_or(Error::Range {
                what: "round",
                value: r,
                limit: outcomes.len() as u64,
            })
        })
        .collect::<Result<_>>()?;
    arm_stats(&Subhistory::new(entries)?, num_arms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behavior::BehaviorKind;
    use crate::graph::{build_full_disclosure, build_l_level, build_two_level, LevelSpec};

    #[test]
    fn optimism_lock_in_on_all_ones() {
        let inst = BanditInstance::new(vec![2.0 / 3.0, 1.0 / 3.0], 50).unwrap();
        let tape = RewardTape::from_rows(&inst, vec![vec![1; 50], vec![0; 50]]).unwrap();
        let g = build_full_disclosure(50).unwrap();
        let tr = run_on_tape(
            &inst,
            &Policy::Graph(g),
            &BehaviorConfig::empirical(),
            &tape,
            RunOptions::default(),
        )
        .unwrap();
        assert_eq!(tr.pulls_per_arm, vec![50, 0]);
        assert_eq!(tr.regret, 0.0);
    }

    #[test]
    fn single_round() {
        let inst = BanditInstance::new(vec![0.4, 0.6], 1).unwrap();
        let tr = run(
            &inst,
            &build_full_disclosure(1).unwrap(),
            &BehaviorConfig::empirical(),
            5,
        )
        .unwrap();
        assert_eq!(tr.outcomes[0].arm, 0);
        assert!((tr.regret - 0.2).abs() < 1e-15);
    }

    #[test]
    fn deterministic_and_horizon_checked() {
        let inst = BanditInstance::new(vec![0.55, 0.45], 300).unwrap();
        let g = build_two_level(300, 20, 2).unwrap();
        let cfg = BehaviorConfig::new(BehaviorKind::BandPerturbed);
        let a = run(&inst, &g, &cfg, 11).unwrap();
        let b = run(&inst, &g, &cfg, 11).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let short = build_full_disclosure(10).unwrap();
        assert!(matches!(
            run(&inst, &short, &cfg, 1),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn assembled_stats_match_subhistories() {
        let spec = LevelSpec {
            num_levels: 3,
            sigma: 2,
            group_sizes: vec![2, 3, 4],
            path_len: 2,
            gamma_factor: None,
        };
        let horizon = 150;
        let inst = BanditInstance::new(vec![0.6, 0.4], horizon).unwrap();
        let g = build_l_level(&spec, horizon).unwrap();
        for seed in 0..5 {
            let tape = RewardTape::new(seed, &inst);
            let opts = RunOptions {
                check_subhistories: true,
                validate_graph: true,
            };
            run_on_tape(
                &inst,
                &Policy::Graph(g.clone()),
                &BehaviorConfig::empirical(),
                &tape,
                opts,
            )
            .unwrap();
        }
    }

    #[test]
    fn regret_examples() {
        let inst = BanditInstance::new(vec![0.6, 0.4], 4).unwrap();
        assert_eq!(regret_of(&[0, 1, 0, 1], &inst).unwrap(), 0.4);
        assert_eq!(regret_of(&[0, 0, 0, 0], &inst).unwrap(), 0.0);
        assert!(regret_of(&[2], &inst).is_err());
    }

    #[test]
    fn constant_worst_is_gap_times_t() {
        let inst = BanditInstance::new(vec![0.55, 0.45], 1000).unwrap();
        let tape = RewardTape::new(1, &inst);
        let tr = run_on_tape(
            &inst,
            &Policy::Constant(ConstantArm::Worst),
            &BehaviorConfig::empirical(),
            &tape,
            RunOptions::default(),
        )
        .unwrap();
        assert_eq!(tr.regret, 100.0);
        assert!(herding_indicator(&tr, 0.25));
    }

    #[test]
    fn herding_cases() {
        let mk = |arms: &[Arm]| SimTrace {
            outcomes: arms
                .iter()
                .enumerate()
                .map(|(i, &a)| Outcome::new(i as u64 + 1, a, 0))
                .collect(),
            pulls_per_arm: vec![],
            regret: 0.0,
            config_digest: String::new(),
            seed: 0,
            means: vec![0.6, 0.4],
        };
        assert!(herding_indicator(&mk(&[0, 0, 0, 1]), 0.25));
        assert!(!herding_indicator(&mk(&[0, 0, 0, 0]), 0.25));
        assert!(!herding_indicator(&mk(&[0, 0, 0, 1, 0, 1, 1, 0]), 0.5));
    }

    #[test]
    fn batch_preserves_order() {
        let inst = BanditInstance::new(vec![0.55, 0.45], 200).unwrap();
        let policy = Policy::Graph(build_full_disclosure(200).unwrap());
        let cfg = BehaviorConfig::empirical();
        let out = run_batch(&inst, &policy, "full", &cfg, &[3, 1, 2]);
        let seeds: Vec<u64> = out.iter().map(|r| r.as_ref().unwrap().seed).collect();
        assert_eq!(seeds, vec![3, 1, 2]);
        for r in out {
            let s = r.unwrap();
            let seq = run(&inst, &build_full_disclosure(200).unwrap(), &cfg, s.seed).unwrap();
            assert_eq!(s.regret, seq.regret);
        }
    }

    #[test]
    fn mean_se_definition() {
        let (m, se) = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }
}
