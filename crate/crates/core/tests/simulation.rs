//! Distributional checks of the path simulators.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use jumpstat::simulate::{
    correlated_normals, poisson_jump_count, simulate_path, simulate_with_key, CauchyParams,
    JumpModel, NoiseParams, PathSpec, PoissonJumpParams, StreamKey, SvParams, VolJumpParams,
};
use jumpstat::variation::Calendar;

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[(lo + 1).min(sorted.len() - 1)] - sorted[lo])
}

fn constant_vol(beta: f64) -> SvParams {
    SvParams {
        beta,
        gamma: 0.0,
        kappa: 1.0,
        rho: 0.0,
        v0: None,
    }
}

#[test]
fn constant_volatility_increments_have_the_right_moments() {
    let beta = 0.16;
    let mut incs = Vec::new();
    for seed in 0..5 {
        let path =
            simulate_path(&PathSpec::intraday(constant_vol(beta), 1.0).with_seed(seed)).unwrap();
        incs.extend_from_slice(path.series.increments());
    }
    let delta = PathSpec::intraday(constant_vol(beta), 1.0)
        .horizon_and_delta()
        .1;
    let n = incs.len() as f64;
    let (mean, var) = mean_var(&incs);
    let mean_se = (beta * delta / n).sqrt();
    assert!(
        (mean + beta * delta / 2.0).abs() < 4.0 * mean_se,
        "mean {mean}"
    );
    let var_se = beta * delta * (2.0 / n).sqrt();
    assert!(
        (var - beta * delta).abs() < 4.0 * var_se,
        "var {var} vs {}",
        beta * delta
    );
}

#[test]
fn cauchy_increments_have_median_zero_and_unit_interquartile_range() {
    let spec = PathSpec::intraday(constant_vol(1e-12), 1.0)
        .with_jumps(JumpModel::Cauchy(CauchyParams { theta: 1.0 }));
    let delta = spec.horizon_and_delta().1;
    let mut incs = Vec::new();
    for seed in 0..4 {
        let path = simulate_path(&spec.clone().with_seed(seed)).unwrap();
        incs.extend_from_slice(path.series.increments());
    }
    incs.sort_by(f64::total_cmp);
    // The sum of the substep draws is Cauchy with scale delta / 2, so the
    // quartiles sit at -delta / 2 and delta / 2.
    let median = quantile(&incs, 0.5);
    let iqr = quantile(&incs, 0.75) - quantile(&incs, 0.25);
    assert!(median.abs() < 0.02 * delta, "median {median}");
    assert!((iqr / delta - 1.0).abs() < 0.03, "iqr {iqr} vs {delta}");
}

#[test]
fn correlated_normals_have_the_requested_correlation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for rho in [-0.5, 0.0, 0.8] {
        let pairs: Vec<(f64, f64)> = (0..1_000_000)
            .map(|_| correlated_normals(&mut rng, rho))
            .collect();
        let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let (ma, va) = mean_var(&a);
        let (mb, vb) = mean_var(&b);
        let cov =
            pairs.iter().map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (pairs.len() - 1) as f64;
        let corr = cov / (va * vb).sqrt();
        assert!((corr - rho).abs() < 0.01, "rho {rho}: {corr}");
        assert!((vb - 1.0).abs() < 0.01);
    }
}

fn poisson_spec(condition: bool) -> PathSpec {
    let mut jumps = PoissonJumpParams::from_variance_budget(0.16, 0.75, 1.0, &Calendar::default());
    jumps.condition_on_jump = condition;
    PathSpec::intraday(SvParams::liquid_stock().with_long_run_vol(0.2), 5.0)
        .with_jumps(JumpModel::Poisson(jumps))
}

#[test]
fn poisson_jump_count_has_mean_lambda() {
    let spec = poisson_spec(false);
    let n = 10_000;
    let counts: Vec<f64> = (0..n)
        .map(|p| poisson_jump_count(&spec, &StreamKey::new(8, p)).unwrap() as f64)
        .collect();
    let (mean, _) = mean_var(&counts);
    let se = (1.0 / n as f64).sqrt();
    assert!((mean - 1.0).abs() < 4.0 * se, "mean count {mean}");
    let zero = counts.iter().filter(|&&c| c == 0.0).count() as f64 / n as f64;
    let e1 = (-1.0f64).exp();
    assert!(
        (zero - e1).abs() < 4.0 * (e1 * (1.0 - e1) / n as f64).sqrt(),
        "P(0) {zero}"
    );
}

#[test]
fn jump_flags_mark_exactly_the_intervals_that_differ() {
    let with = poisson_spec(false);
    let mut without = with.clone();
    without.jumps = None;
    let mut flagged = 0;
    for p in 0..40 {
        let key = StreamKey::new(4, p);
        let a = simulate_with_key(&with, &key).unwrap();
        let b = simulate_with_key(&without, &key).unwrap();
        assert_eq!(a.jump_count.unwrap() > 0, a.has_jump());
        for ((x, y), &flag) in a
            .series
            .increments()
            .iter()
            .zip(b.series.increments())
            .zip(&a.jump_flags)
        {
            if flag {
                flagged += 1;
                assert!(
                    (x - y).abs() >= 0.9 * poisson_scale(&with),
                    "flagged interval without a jump"
                );
            } else {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
    assert!(flagged > 0);
}

fn poisson_scale(spec: &PathSpec) -> f64 {
    match spec.jumps {
        Some(JumpModel::Poisson(p)) => p.jump_scale,
        _ => 0.0,
    }
}

#[test]
fn jumps_carry_the_budgeted_share_of_variance() {
    let with = poisson_spec(false);
    let mut without = with.clone();
    without.jumps = None;
    let horizon = with.horizon_and_delta().0;
    let per_path: Vec<f64> = (0..3000)
        .map(|p| {
            let key = StreamKey::new(12, p);
            let a = simulate_with_key(&with, &key).unwrap();
            let b = simulate_with_key(&without, &key).unwrap();
            a.series
                .increments()
                .iter()
                .zip(b.series.increments())
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                / horizon
        })
        .collect();
    let (mean, var) = mean_var(&per_path);
    let se = (var / per_path.len() as f64).sqrt();
    assert!(
        (mean - 0.12).abs() < 4.0 * se,
        "jump variance {mean} ± {se}"
    );
}

#[test]
fn noise_adds_twice_its_variance_to_increments() {
    let clean = PathSpec::intraday(SvParams::liquid_stock(), 1.0);
    let std_dev = 1e-3;
    let mut noisy = clean.clone();
    noisy.noise = Some(NoiseParams { std_dev });
    let mut diffs = Vec::new();
    for p in 0..4 {
        let key = StreamKey::new(6, p);
        let a = simulate_with_key(&noisy, &key).unwrap();
        let b = simulate_with_key(&clean, &key).unwrap();
        diffs.extend(
            a.series
                .increments()
                .iter()
                .zip(b.series.increments())
                .map(|(x, y)| x - y),
        );
    }
    let (_, var) = mean_var(&diffs);
    let target = 2.0 * std_dev * std_dev;
    let rel_se = (3.0 / diffs.len() as f64).sqrt();
    assert!(
        (var / target - 1.0).abs() < 4.0 * rel_se,
        "{var} vs {target}"
    );
}

#[test]
fn variance_jumps_scale_the_variance_within_bounds() {
    let mut spec = PathSpec::intraday(
        SvParams {
            beta: 0.16,
            gamma: 0.0,
            kappa: 1e-9,
            rho: 0.0,
            v0: None,
        },
        5.0,
    );
    spec.vol_jumps = Some(VolJumpParams {
        intensity: 1.0,
        max_relative: 0.3,
    });
    let mut jumps = 0;
    for seed in 0..200 {
        let path = simulate_path(&spec.clone().with_seed(seed)).unwrap();
        for w in path.variance.windows(2) {
            let ratio = w[1] / w[0];
            if (ratio - 1.0).abs() > 1e-6 {
                jumps += 1;
                assert!((0.7 - 1e-9..=1.3 + 1e-9).contains(&ratio), "ratio {ratio}");
            }
        }
    }
    // About one jump per path per day.
    assert!(
        (150..=250).contains(&jumps),
        "{jumps} variance jumps in 200 days"
    );
}

#[test]
fn conditioned_paths_always_jump_and_count_their_attempts() {
    let spec = poisson_spec(true);
    let mut attempts = 0;
    for seed in 0..200 {
        let path = simulate_path(&spec.clone().with_seed(seed)).unwrap();
        assert!(path.has_jump());
        attempts += path.attempts;
    }
    // E[attempts] = 1 / (1 - e^{-1}) ≈ 1.58.
    let mean = attempts as f64 / 200.0;
    assert!((1.3..1.9).contains(&mean), "mean attempts {mean}");
}
