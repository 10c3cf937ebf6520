use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use stabkit::data::{Dataset, Family};
use stabkit::simlab::{gen_design, gen_response, Design};
use stabkit::stabsel::{self, SamplingScheme, StabSelConfig, StabSelResult};

fn simulated(n: usize, p: usize, seed: u64, family: Family) -> Dataset {
    let x = gen_design(n, p, Design::Toeplitz { rho: 0.5 }, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let resp = gen_response(&x, 2.min(p), &mut rng).unwrap();
    let y = match family {
        Family::Binomial => resp.y,
        Family::Gaussian => (0..n)
            .map(|i| {
                let noise: f64 = rng.sample(StandardNormal);
                (0..p).map(|j| resp.beta[j] * x.get(i, j)).sum::<f64>() + noise
            })
            .collect(),
    };
    Dataset::new(x, y, Dataset::default_names(p), family).unwrap()
}

fn check_invariants(res: &StabSelResult, q: usize, pi_thr: f64) {
    for sel in &res.per_run_selected {
        assert_eq!(sel.len(), q);
    }
    assert!(res.stable_set.len() as f64 <= q as f64 / pi_thr + 1e-9);
    let total: f64 = res.pi_hat.iter().sum();
    assert!(
        (total - q as f64).abs() < 1e-9,
        "frequencies sum to {total}"
    );
    if let Some(tilde) = &res.pi_tilde {
        for (t, h) in tilde.iter().zip(&res.pi_hat) {
            assert!(*t <= *h + 1e-12);
        }
    }
    let path = res.path.as_ref().unwrap();
    for (j, row) in path.iter().enumerate() {
        assert!(
            row.windows(2).all(|w| w[0] <= w[1] + 1e-12),
            "path {j} not monotone"
        );
        assert!((row.last().unwrap() - res.pi_hat[j]).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn structural_invariants_hold(
        n_frac in 0.0f64..1.0,
        p in 3usize..15,
        q_frac in 0.1f64..0.9,
        pi_thr in 0.55f64..0.95,
        pairs in any::<bool>(),
        gaussian in any::<bool>(),
        seed in any::<u64>(),
    ) {
        // Fits stall when a subsample can be interpolated (gaussian) or is
        // separated by a few covariates (binomial), so both stay clear of it.
        let (family, n) = if gaussian {
            (Family::Gaussian, 2 * p + 4 + (n_frac * 40.0) as usize)
        } else {
            (Family::Binomial, 80 + (n_frac * 80.0) as usize)
        };
        let data = simulated(n, p, seed, family);
        let q_max = if gaussian { p - 1 } else { p / 2 };
        let q = ((p as f64 * q_frac).round() as usize).clamp(1, q_max);
        let scheme = if pairs {
            SamplingScheme::ComplementaryPairs { b: 6 }
        } else {
            SamplingScheme::Subsample { b: 10 }
        };
        let mut config = StabSelConfig::new(q, pi_thr, scheme, seed);
        config.record_paths = true;
        let res = stabsel::run(&data, &config).map_err(|e| TestCaseError::fail(format!("{family:?} n={n} p={p} q={q}: {e}")))?;
        prop_assert_eq!(res.pi_tilde.is_some(), pairs);
        check_invariants(&res, q, pi_thr);
    }
}

#[test]
fn identical_across_thread_counts() {
    let data = simulated(60, 30, 11, Family::Binomial);
    let mut config = StabSelConfig::new(5, 0.6, SamplingScheme::ComplementaryPairs { b: 25 }, 99);
    config.record_paths = true;
    let run_with = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| stabsel::run(&data, &config).unwrap())
    };
    let one = run_with(1);
    for threads in [2, 4] {
        let other = run_with(threads);
        assert_eq!(one.pi_hat, other.pi_hat);
        assert_eq!(one.pi_tilde, other.pi_tilde);
        assert_eq!(one.per_run_selected, other.per_run_selected);
        assert_eq!(one.path, other.path);
    }
}

#[test]
fn different_seeds_draw_different_subsamples() {
    let data = simulated(60, 30, 11, Family::Binomial);
    let a = stabsel::run(
        &data,
        &StabSelConfig::new(5, 0.6, SamplingScheme::Subsample { b: 20 }, 1),
    )
    .unwrap();
    let b = stabsel::run(
        &data,
        &StabSelConfig::new(5, 0.6, SamplingScheme::Subsample { b: 20 }, 2),
    )
    .unwrap();
    assert_ne!(a.per_run_selected, b.per_run_selected);
}

#[test]
fn strong_signal_is_stable() {
    let data = simulated(200, 20, 3, Family::Gaussian);
    let config = StabSelConfig::new(4, 0.75, SamplingScheme::ComplementaryPairs { b: 20 }, 5);
    let res = stabsel::run(&data, &config).unwrap();
    let x = data.x();
    // The two influential covariates carry coefficients of magnitude one.
    let mut rng = ChaCha8Rng::seed_from_u64(3 ^ 0xabc);
    let signal = gen_response(x, 2, &mut rng).unwrap().signal;
    for j in signal {
        assert!(
            res.stable_set.contains(&j),
            "{j} missing from {:?}",
            res.stable_set
        );
    }
}
