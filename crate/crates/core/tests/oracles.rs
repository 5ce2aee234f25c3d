use disclosure_core::analysis::{anticoncentration_monitor, binomial_probability, fit_exponent};
use disclosure_core::behavior::{
    estimate, posterior_adaptive_invariance, sequential_posterior_means, BehaviorConfig,
    BehaviorKind,
};
use disclosure_core::model::{anonymize, Outcome, Subhistory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Binomial, Discrete};

#[test]
fn binomial_tail_matches_pmf_sum() {
    for &(n, mu) in &[(1u64, 0.5), (10, 0.3), (100, 0.55), (1600, 0.45)] {
        let b = Binomial::new(mu, n).unwrap();
        let cut = (n as f64 * mu + (n as f64).sqrt()).ceil() as u64;
        let want: f64 = (cut..=n).map(|k| b.pmf(k)).sum();
        let got = binomial_probability(n, mu, |k| k >= cut);
        assert!((got - want).abs() < 1e-10, "n={n} mu={mu}: {got} vs {want}");
        let all = binomial_probability(n, mu, |_| true);
        assert!((all - 1.0).abs() < 1e-10);
    }
}

#[test]
fn anticoncentration_frequencies_track_exact_tails() {
    let r = anticoncentration_monitor(0.5, 200, 20_000, 17).unwrap();
    let se = (r.high_exact * (1.0 - r.high_exact) / 20_000.0).sqrt();
    assert!((r.high_freq - r.high_exact).abs() < 4.0 * se);
    assert!((r.low_freq - r.low_exact).abs() < 4.0 * se);
}

#[test]
fn exponent_fit_recovers_noisy_power_law() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pts: Vec<(f64, f64)> = (8..18)
        .map(|e| {
            let t = f64::from(1u32 << e);
            let noise = 1.0 + 0.05 * (rng.random::<f64>() - 0.5);
            (t, 3.0 * t.powf(0.4) * noise)
        })
        .collect();
    let fit = fit_exponent(&pts).unwrap();
    assert!((fit.slope - 0.4).abs() < 0.01, "{fit:?}");
    assert!((fit.intercept - 3f64.ln()).abs() < 0.1);

    let mut with_zero = pts.clone();
    with_zero.push((1e6, 0.0));
    let fit2 = fit_exponent(&with_zero).unwrap();
    assert_eq!(fit2.points_used, pts.len());
    assert!(fit_exponent(&pts[..2]).is_err());
}

/// Bayesian updating one observation at a time equals the batch posterior mean,
/// whatever the order the observations arrive in.
#[test]
fn posterior_means_over_random_traces() {
    let priors = [(2.0, 3.0), (0.5, 0.5)];
    let cfg = BehaviorConfig {
        beta_params: priors.to_vec(),
        ..BehaviorConfig::new(BehaviorKind::BetaPosterior)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let len = rng.random_range(0..60u64);
        let entries: Vec<Outcome> = (1..=len)
            .map(|t| Outcome::new(t, rng.random_range(0..2), u8::from(rng.random_bool(0.4))))
            .collect();
        let h = Subhistory::new(entries.clone()).unwrap();
        let seq = sequential_posterior_means(&priors, &h, 2);
        let batch = estimate(&cfg, 0, &anonymize(&h), 2).unwrap();
        for a in 0..2 {
            let (al, be) = priors[a];
            let n = entries.iter().filter(|o| o.arm == a).count() as f64;
            let s = entries
                .iter()
                .filter(|o| o.arm == a)
                .map(|o| f64::from(o.reward))
                .sum::<f64>();
            let closed = (al + s) / (al + be + n);
            assert!((seq[a] - closed).abs() < 1e-12);
            assert!((batch[a] - closed).abs() < 1e-12);
        }
        let mut reversed = entries.clone();
        reversed.reverse();
        let relabeled: Vec<Outcome> = reversed
            .iter()
            .enumerate()
            .map(|(i, o)| Outcome::new(i as u64 + 1, o.arm, o.reward))
            .collect();
        let h2 = Subhistory::new(relabeled).unwrap();
        assert!(posterior_adaptive_invariance(&priors, &h, &h2, 2).unwrap());
    }
}
