//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured quantities (run with `--nocapture` to see them).
//!
//! The heat benchmark is the generated d = 200 rod with output at 2/3 of the
//! length and spectral abscissa calibrated to -0.1; its observation models
//! are the dense one (h = 1e-4, n = 5e5) and the sparse one (h = 0.1,
//! n = 100) with output noise sigma = 0.008.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use btinfer::bench::gen_heat;
use btinfer::inference::{
    accumulate_adjoint, fisher_information, fisher_information_with_mode, full_posterior,
    posterior_from_parts, sample_schedule, simulate_measurements, FisherMode, NoiseSetting,
    ObservationSchedule, ScheduleKind,
};
use btinfer::linalg::{mat_exp, nearest_nsd_split, solve_lyapunov, symmetric_part};
use btinfer::lti::{noisy_observability_gramian, spectral_abscissa, LtiSystem};
use btinfer::optimal::{
    forstner_distance, olr_mean, olru_covariance, olru_mean, olru_optimal_distance,
    projected_fisher, spantini_eigenpairs,
};
use btinfer::prior::{make_compatible, monte_carlo_stationary_cov, spin_up_prior, COMPAT_TOL};
use btinfer::reduction::{
    bt_h_reduce, bt_posterior, bt_q_core, bt_q_reduce, project, qm_bt,
};
use btinfer::testing::{
    random_matrix, random_minimal_system, random_spd, random_stable, random_vector, seeded_rng,
};

const HEAT_D: usize = 200;
const HEAT_FRACTION: f64 = 2.0 / 3.0;
const HEAT_ABSCISSA: f64 = -0.1;
const HEAT_SIGMA: f64 = 0.008;

fn heat_system() -> LtiSystem {
    gen_heat(HEAT_D, HEAT_FRACTION, HEAT_ABSCISSA)
        .unwrap()
        .with_noise_cov(DMatrix::from_element(1, 1, HEAT_SIGMA * HEAT_SIGMA))
        .unwrap()
}

fn heat_prior(sys: &LtiSystem) -> btinfer::prior::CompatiblePrior {
    spin_up_prior(sys.a(), &DMatrix::identity(HEAT_D, HEAT_D), None).unwrap()
}

fn rel_frob_diff(sys: &LtiSystem, h: f64, n: usize, mode: FisherMode) -> f64 {
    let sched = sample_schedule(ScheduleKind::Equispaced, h, n, 0).unwrap();
    let fisher = fisher_information_with_mode(sys, &sched, mode).unwrap();
    let q_m = noisy_observability_gramian(sys).unwrap();
    (fisher * h - &q_m).norm() / q_m.norm()
}

/// Dense observations over a long horizon: the rescaled Fisher information
/// matches the infinite Gramian to a fraction of a percent, assembled through
/// the doubling recursion in well under the time budget.
#[test]
fn criterion_01_heat_dense_sum_matches_gramian() {
    let start = Instant::now();
    let sys = heat_system();
    let rel = rel_frob_diff(&sys, 1e-4, 500_000, FisherMode::Doubling);
    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        rel <= 0.005,
        "rel_frob_diff = {rel:.6e} exceeds 0.005 (elapsed {elapsed:.1}s)"
    );
    println!(
        "ACCEPTANCE 01 heat dense observation: PASS (rel_frob_diff = {rel:.4e}, {elapsed:.1}s)"
    );
}

/// Sparse observations: the rescaled Fisher information misses the Gramian
/// by roughly fifteen percent.
#[test]
fn criterion_02_heat_sparse_sum_misses_gramian() {
    let sys = heat_system();
    let rel = rel_frob_diff(&sys, 0.1, 100, FisherMode::Auto);
    assert!(
        (0.05..=0.30).contains(&rel),
        "rel_frob_diff = {rel:.6e} outside [0.05, 0.30]"
    );
    println!("ACCEPTANCE 02 heat sparse observation: PASS (rel_frob_diff = {rel:.4e})");
}

/// The measured Förstner distance of the optimal low-rank update equals its
/// closed form at every rank. The closed form can fall below what the metric
/// resolves in double precision, so the comparison carries an absolute floor
/// scaled to the prior-to-posterior distance.
#[test]
fn criterion_03_olru_distance_matches_closed_form() {
    let mut worst_rel: f64 = 0.0;

    let mut check_system = |sys: &LtiSystem,
                            prior: &btinfer::prior::CompatiblePrior,
                            sched: &ObservationSchedule,
                            truth_seed: u64,
                            noise_seed: u64,
                            label: &str| {
        let x0 = prior.sample(truth_seed);
        let mset = simulate_measurements(sys, sched, &x0, NoiseSetting::Seeded(noise_seed)).unwrap();
        let h = fisher_information(sys, sched).unwrap();
        let pencil = spantini_eigenpairs(&h, prior).unwrap();
        let post = full_posterior(prior, sys, &mset).unwrap();
        let scale = forstner_distance(&post.cov, &prior.cov).unwrap();
        // Round-off guard: the metric's tail eigenvalues carry an absolute
        // error set by the head of the spectrum, so distances more than ~13
        // digits below the prior-to-posterior distance are not resolvable
        // in f64 and the comparison falls back to that absolute level.
        let floor = 1e-13 * (1.0 + scale);
        let d = prior.dim();
        let grid: Vec<usize> = if d > 20 {
            (1..=20).chain((25..=60.min(d)).step_by(5)).collect()
        } else {
            (1..=d).collect()
        };
        for r in grid {
            let cov = olru_covariance(prior, &pencil, r).unwrap();
            let measured = forstner_distance(&post.cov, &cov).unwrap();
            let closed = olru_optimal_distance(&pencil, r);
            let err = (measured - closed).abs();
            assert!(
                err <= 1e-7 * closed + floor,
                "{label} r={r}: measured {measured:.6e} vs closed {closed:.6e}"
            );
            if closed > floor {
                worst_rel = worst_rel.max(err / closed);
            }
        }
    };

    let sys = heat_system();
    let prior = heat_prior(&sys);
    let sched = sample_schedule(ScheduleKind::Equispaced, 0.1, 100, 0).unwrap();
    check_system(&sys, &prior, &sched, 17, 42, "heat sparse");

    // Full-width forcing keeps the spin-up prior well conditioned, matching
    // the identity-port convention of the benchmark.
    for (i, d) in [6usize, 10, 14, 17, 20].into_iter().enumerate() {
        let mut rng = seeded_rng(300 + i as u64);
        let sys = random_minimal_system(d, d, 2, &mut rng)
            .with_noise_cov(DMatrix::identity(2, 2) * 9.0)
            .unwrap();
        let prior = spin_up_prior(sys.a(), sys.b().unwrap(), None).unwrap();
        let sched = sample_schedule(ScheduleKind::Equispaced, 0.25, 2 * d, 0).unwrap();
        check_system(&sys, &prior, &sched, 1, 2, &format!("random d={d}"));
    }
    println!(
        "ACCEPTANCE 03 optimal update distance closed form: PASS (worst resolvable rel err {worst_rel:.2e})"
    );
}

/// Under dense observation the Gramian-pencil reduction is near-optimal at
/// low ranks and never beats the optimal update at any rank.
#[test]
fn criterion_04_btq_near_optimal_under_dense_observation() {
    let sys = heat_system();
    let prior = heat_prior(&sys);
    let sched = sample_schedule(ScheduleKind::Equispaced, 1e-4, 500_000, 0).unwrap();
    let h = fisher_information(&sys, &sched).unwrap();
    let pencil = spantini_eigenpairs(&h, &prior).unwrap();
    let zero = DVector::zeros(HEAT_D);
    let post = posterior_from_parts(&prior, &h, &zero, "full", None).unwrap();

    let core = bt_q_core(&sys, &prior).unwrap();
    let usable = core.usable_rank();
    let grid: Vec<usize> = (1..=20)
        .chain((25..=60).step_by(5))
        .filter(|&r| r <= usable)
        .collect();
    let mut worst_low_ratio: f64 = 0.0;
    for &r in &grid {
        let red = project(core.bases(r).unwrap(), sys.a(), sys.c(), sys.b()).unwrap();
        let h_bt = btinfer::reduction::bt_fisher_information(&red, &sys, &sched).unwrap();
        let bt_post = posterior_from_parts(&prior, &h_bt, &zero, "bt-q", Some(r)).unwrap();
        let bt_dist = forstner_distance(&post.cov, &bt_post.cov).unwrap();
        let optimum = olru_optimal_distance(&pencil, r);
        assert!(
            bt_dist >= optimum - 1e-8,
            "r={r}: reduced-model distance {bt_dist:.6e} beats the optimum {optimum:.6e}"
        );
        if r <= 10 {
            assert!(
                bt_dist <= 1.10 * optimum,
                "r={r}: {bt_dist:.6e} > 1.10 x optimum {optimum:.6e}"
            );
            worst_low_ratio = worst_low_ratio.max(bt_dist / optimum);
        }
    }
    println!(
        "ACCEPTANCE 04 near-optimality under dense observation: PASS (worst ratio {worst_low_ratio:.4} for r <= 10, {} ranks checked)",
        grid.len()
    );
}

/// At full order every approximation collapses onto the exact posterior.
#[test]
fn criterion_05_full_order_limits() {
    let mut worst_mean: f64 = 0.0;
    let mut worst_cov: f64 = 0.0;
    for (d, seed) in [(6usize, 501u64), (8, 502), (9, 515), (10, 504), (12, 505)] {
        let mut rng = seeded_rng(seed);
        let sys = random_minimal_system(d, 2, 2, &mut rng);
        let prior = spin_up_prior(sys.a(), sys.b().unwrap(), None).unwrap();
        let sched = sample_schedule(ScheduleKind::Equispaced, 0.3, d, 0).unwrap();
        let x0 = prior.sample(seed + 1);
        let mset = simulate_measurements(&sys, &sched, &x0, NoiseSetting::Seeded(seed + 2)).unwrap();
        let post = full_posterior(&prior, &sys, &mset).unwrap();
        let h = fisher_information(&sys, &sched).unwrap();
        let z = accumulate_adjoint(&sys, &sched, &mset.values).unwrap();
        let pencil = spantini_eigenpairs(&h, &prior).unwrap();

        let mean_norm = post.mean.norm();
        let mut check_mean = |mean: &DVector<f64>, label: &str| {
            let rel = (mean - &post.mean).norm() / mean_norm;
            assert!(rel <= 1e-8, "{label} d={d}: mean rel err {rel:.3e}");
            worst_mean = worst_mean.max(rel);
        };
        let mut check_cov = |cov: &DMatrix<f64>, label: &str| {
            let dist = forstner_distance(&post.cov, cov).unwrap();
            assert!(dist <= 1e-6, "{label} d={d}: Förstner {dist:.3e}");
            worst_cov = worst_cov.max(dist);
        };

        let red_q = bt_q_reduce(&sys, &prior, d).unwrap();
        let post_q = bt_posterior(&red_q, &prior, &sys, &mset).unwrap();
        check_mean(&post_q.mean, "bt-q");
        check_cov(&post_q.cov, "bt-q");

        let red_h = bt_h_reduce(&sys, &prior, &sched, d).unwrap();
        let post_h = bt_posterior(&red_h, &prior, &sys, &mset).unwrap();
        check_mean(&post_h.mean, "bt-h");
        check_cov(&post_h.cov, "bt-h");

        check_mean(&olr_mean(&prior, &pencil, d, &z).unwrap(), "olr");
        check_mean(&olru_mean(&prior, &pencil, d, &z).unwrap(), "olru");
        check_cov(&olru_covariance(&prior, &pencil, d).unwrap(), "olru");
    }
    println!(
        "ACCEPTANCE 05 full-order limits: PASS (worst mean rel {worst_mean:.2e}, worst Förstner {worst_cov:.2e})"
    );
}

/// The Gramian-pencil reduction is stable at every usable order for every
/// stable system with a spin-up prior.
#[test]
fn criterion_06_reduced_dynamics_stay_stable() {
    let mut worst: f64 = f64::NEG_INFINITY;
    let mut count = 0usize;
    for i in 0..100u64 {
        let mut rng = seeded_rng(6000 + i);
        let d = rand::Rng::random_range(&mut rng, 2..=40usize);
        let a = random_stable(d, &mut rng);
        let b = random_matrix(d, d, &mut rng);
        let k = 1 + (i % 3) as usize;
        let c = random_matrix(k, d, &mut rng);
        let sys = LtiSystem::new(a, Some(b), c, DMatrix::identity(k, k)).unwrap();
        let prior = spin_up_prior(sys.a(), sys.b().unwrap(), None).unwrap();
        let core = bt_q_core(&sys, &prior).unwrap();
        for r in 1..=core.usable_rank() {
            let red = project(core.bases(r).unwrap(), sys.a(), sys.c(), sys.b()).unwrap();
            assert!(
                red.reduced_abscissa < 0.0,
                "system {i} (d={d}) r={r}: abscissa {:.3e}",
                red.reduced_abscissa
            );
            worst = worst.max(red.reduced_abscissa);
            count += 1;
        }
    }
    println!(
        "ACCEPTANCE 06 reduced stability: PASS ({count} reductions, worst abscissa {worst:.3e})"
    );
}

/// Independently re-solved Gramians of the reduced whitened system both land
/// on the diagonal of retained Hankel values.
#[test]
fn criterion_07_reduced_gramians_are_balanced() {
    let mut worst: f64 = 0.0;
    for i in 0..20u64 {
        let mut rng = seeded_rng(700 + i);
        let d = 4 + (i as usize) % 12;
        let sys = random_minimal_system(d, 2, 2, &mut rng);
        let prior = spin_up_prior(sys.a(), sys.b().unwrap(), None).unwrap();
        let core = bt_q_core(&sys, &prior).unwrap();
        for r in 1..=core.usable_rank() {
            let red = project(core.bases(r).unwrap(), sys.a(), sys.c(), sys.b()).unwrap();
            let b_r = red.b_r.as_ref().unwrap();
            let reduced = red.reduced_system(sys.noise_cov().clone()).unwrap();
            let p_r = solve_lyapunov(&red.a_r, &(b_r * b_r.transpose())).unwrap();
            let q_r =
                solve_lyapunov(&red.a_r.transpose(), &reduced.output_information()).unwrap();
            let delta =
                DMatrix::from_diagonal(&DVector::from_fn(r, |j, _| red.bases.hankel[j]));
            let scale = delta.norm();
            let err_p = (&p_r - &delta).norm() / scale;
            let err_q = (&q_r - &delta).norm() / scale;
            assert!(
                err_p <= 1e-7 && err_q <= 1e-7,
                "system {i} (d={d}) r={r}: P err {err_p:.3e}, Q err {err_q:.3e}"
            );
            worst = worst.max(err_p.max(err_q));
        }
    }
    println!("ACCEPTANCE 07 reduced Gramian balance: PASS (worst rel deviation {worst:.2e})");
}

/// Output error of the reduced whitened system started from `x(0) = B u_0`
/// stays below twice the truncated Hankel tail for unit inputs, on the
/// pinned slow-timescale d = 12 system.
#[test]
fn criterion_08_hankel_tail_bound() {
    // Generated at slow "desk" scale (fastest mode ~ -0.5) where the
    // impulse-realized input keeps the driven-input bound meaningful.
    let mut rng = seeded_rng(901);
    let raw = random_minimal_system(12, 2, 2, &mut rng);
    let eigs = raw.a().complex_eigenvalues();
    let fastest = eigs.iter().map(|e| -e.re).fold(0.0f64, f64::max);
    let sys = LtiSystem::new(
        raw.a() * (0.5 / fastest),
        raw.b().cloned(),
        raw.c().clone(),
        raw.noise_cov().clone(),
    )
    .unwrap();
    let mut rng = seeded_rng(10_901);

    let prior = spin_up_prior(sys.a(), sys.b().unwrap(), None).unwrap();
    let core = bt_q_core(&sys, &prior).unwrap();
    let usable = core.usable_rank();
    let hankel = core.hankel_spectrum().to_vec();
    let abscissa = spectral_abscissa(sys.a()).unwrap();
    let t_max = 40.0 / abscissa.abs();
    let steps = (((t_max * sys.a().norm() / 0.02).ceil() as usize).max(2000) + 1) & !1usize;
    let h_step = t_max / steps as f64;
    let e = mat_exp(sys.a(), h_step).unwrap();
    let cw = sys.whitened_output();

    let mut worst_ratio: f64 = 0.0;
    let mut checks = 0usize;
    for r in 1..usable {
        let red = project(core.bases(r).unwrap(), sys.a(), sys.c(), sys.b()).unwrap();
        let e_r = mat_exp(&red.a_r, h_step).unwrap();
        let cw_r = &cw * &red.bases.t_r;
        let bound = 2.0 * hankel[r..].iter().sum::<f64>();
        for _ in 0..20 {
            let mut u0 = random_vector(2, &mut rng);
            u0 /= u0.norm();
            let mut x = sys.b().unwrap() * &u0;
            let mut xr = red.b_r.as_ref().unwrap() * &u0;
            let mut acc = 0.0;
            for j in 0..=steps {
                let diff = (&cw * &x - &cw_r * &xr).norm_squared();
                let w = if j == 0 || j == steps {
                    1.0
                } else if j % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                acc += w * diff;
                if j < steps {
                    x = &e * x;
                    xr = &e_r * xr;
                }
            }
            let err = (acc * h_step / 3.0).sqrt();
            assert!(
                err <= bound,
                "r={r}: output error {err:.6e} exceeds tail bound {bound:.6e}"
            );
            worst_ratio = worst_ratio.max(err / bound);
            checks += 1;
        }
    }
    println!(
        "ACCEPTANCE 08 Hankel tail bound: PASS ({checks} checks, worst error/bound {worst_ratio:.3})"
    );
}

/// When the information matrix is an exact rescaling of the observability
/// Gramian, the lifted reduced Gramian reproduces the projected information
/// matrix times the scale.
#[test]
fn criterion_09_matched_eigenpair_construction() {
    let mut rng = seeded_rng(910);
    let d = 8;
    let sys = random_minimal_system(d, 2, 2, &mut rng);
    let prior = spin_up_prior(sys.a(), sys.b().unwrap(), None).unwrap();
    let q_m = noisy_observability_gramian(&sys).unwrap();
    let h_scale = 0.25;
    let h = &q_m / h_scale;
    let pencil = spantini_eigenpairs(&h, &prior).unwrap();

    let mut worst: f64 = 0.0;
    for r in 1..=d {
        let h_hat = projected_fisher(&pencil, &h, r).unwrap();
        let red = bt_q_reduce(&sys, &prior, r).unwrap();
        let q_bt = qm_bt(&red, &sys).unwrap();
        let err = (&q_bt - &h_hat * h_scale).norm() / h_hat.norm();
        assert!(err <= 1e-7, "r={r}: deviation {err:.3e}");
        worst = worst.max(err);
    }
    println!("ACCEPTANCE 09 matched-eigenpair lift: PASS (worst rel deviation {worst:.2e})");
}

/// With simultaneously diagonalizable operators the two pencils share all
/// eigenvectors, so both reductions produce the same oblique projector.
#[test]
fn criterion_10_shared_eigenvector_projectors_coincide() {
    let d = 6;
    let rates: Vec<f64> = (1..=d).map(|i| 0.5 + 0.3 * i as f64).collect();
    let a = DMatrix::from_diagonal(&DVector::from_fn(d, |i, _| -rates[i]));
    let c = DMatrix::identity(d, d);
    let gamma0 = DMatrix::from_diagonal(&DVector::from_fn(d, |i, _| 4.0f64.powi(-(i as i32 + 1))));
    let sys = LtiSystem::new(a.clone(), None, c, DMatrix::identity(d, d)).unwrap();
    let (prior, _, _) = make_compatible(&a, &gamma0, COMPAT_TOL).unwrap();
    let sched = sample_schedule(ScheduleKind::Equispaced, 0.3, 10, 0).unwrap();

    let mut worst: f64 = 0.0;
    for r in 1..d {
        let red_q = bt_q_reduce(&sys, &prior, r).unwrap();
        let red_h = bt_h_reduce(&sys, &prior, &sched, r).unwrap();
        let proj_q = &red_q.bases.t_r * red_q.bases.s_r.transpose();
        let proj_h = &red_h.bases.t_r * red_h.bases.s_r.transpose();
        let diff = (&proj_q - &proj_h).norm();
        assert!(diff <= 1e-8, "r={r}: projector difference {diff:.3e}");
        worst = worst.max(diff);
    }
    println!("ACCEPTANCE 10 shared-eigenvector projectors: PASS (worst difference {worst:.2e})");
}

/// Shrinking the sampling interval while growing the horizon sublinearly
/// drives the rescaled information sum to the Gramian.
#[test]
fn criterion_11_continuum_limit_sequence() {
    let mut rng = seeded_rng(1100);
    let d = 6;
    let a = random_stable(d, &mut rng) * 0.7;
    let c = random_matrix(2, d, &mut rng);
    let sys = LtiSystem::new(a, None, c, DMatrix::identity(2, 2)).unwrap();
    let q_m = noisy_observability_gramian(&sys).unwrap();
    let m = sys.output_information();

    // Observation times (i-1) h(n) with horizon T(n) = sqrt(n): the t = 0
    // term is added explicitly on top of the positive-time schedule.
    let mut prev = f64::INFINITY;
    let mut values = Vec::new();
    for n in [100usize, 1_000, 10_000, 100_000] {
        let t_n = (n as f64).sqrt();
        let h = t_n / (n as f64 - 1.0);
        let sched = sample_schedule(ScheduleKind::Equispaced, h, n - 1, 0).unwrap();
        let fisher = &m + fisher_information(&sys, &sched).unwrap();
        let r = (fisher * h - &q_m).norm() / q_m.norm();
        assert!(r < prev, "sequence not decreasing at n = {n}: {r:.6e} >= {prev:.6e}");
        prev = r;
        values.push(r);
    }
    assert!(
        *values.last().unwrap() <= 1e-2,
        "final value {:.6e} above 1e-2",
        values.last().unwrap()
    );
    println!(
        "ACCEPTANCE 11 continuum limit: PASS (sequence {:.2e} -> {:.2e} -> {:.2e} -> {:.2e})",
        values[0], values[1], values[2], values[3]
    );
}

/// Averaged rescaled information over Poisson schedules matches the Gramian
/// entrywise within three standard errors, and the stochastic spin-up
/// simulation matches the Lyapunov stationary covariance the same way.
#[test]
fn criterion_12_random_time_and_spin_up_monte_carlo() {
    // Poisson observation times.
    let mut rng = seeded_rng(1200);
    let d = 4;
    let a = {
        let q = btinfer::testing::random_orthogonal(d, &mut rng);
        let diag = DMatrix::from_diagonal(&nalgebra::dvector![-0.5, -0.9, -1.4, -2.0]);
        &q * diag * q.transpose()
    };
    let c = random_matrix(2, d, &mut rng);
    let noise = DMatrix::from_diagonal(&nalgebra::dvector![0.6, 1.3]);
    let sys = LtiSystem::new(a.clone(), None, c, noise).unwrap();
    let q_m = noisy_observability_gramian(&sys).unwrap();
    let gap = 0.25;
    let reps = 500u64;
    let mut sum = DMatrix::<f64>::zeros(d, d);
    let mut sum_sq = DMatrix::<f64>::zeros(d, d);
    for rep in 0..reps {
        let sched = sample_schedule(ScheduleKind::Poisson, gap, 400, 9000 + rep).unwrap();
        // Keep observations until the propagator norm falls below 1e-8.
        let mut cut = sched.times.len();
        let mut phi = DMatrix::<f64>::identity(d, d);
        let mut prev = 0.0;
        for (i, &t) in sched.times.iter().enumerate() {
            phi = mat_exp(&a, t - prev).unwrap() * phi;
            prev = t;
            if phi.norm() <= 1e-8 {
                cut = i + 1;
                break;
            }
        }
        assert!(cut < sched.times.len(), "rep {rep}: schedule too short");
        let sub = ObservationSchedule::explicit(sched.times[..cut].to_vec()).unwrap();
        let sample = fisher_information(&sys, &sub).unwrap() * gap;
        sum += &sample;
        sum_sq += sample.component_mul(&sample);
    }
    let n = reps as f64;
    let mean = &sum / n;
    let var = (&sum_sq / n - mean.component_mul(&mean)).map(|v| v.max(0.0));
    let se = (var / (n - 1.0)).map(f64::sqrt);
    let mut worst_z: f64 = 0.0;
    for i in 0..d {
        for j in 0..d {
            let z = (mean[(i, j)] - q_m[(i, j)]).abs() / se[(i, j)].max(1e-300);
            assert!(z <= 3.0, "entry ({i},{j}): z = {z:.2}");
            worst_z = worst_z.max(z);
        }
    }

    // Stochastic spin-up vs. the Lyapunov stationary covariance.
    let b = random_matrix(d, 2, &mut rng);
    let prior = spin_up_prior(&a, &b, None).unwrap();
    let (mc, se_mc) = monte_carlo_stationary_cov(&a, &b, 3000, 20.0, 0.005, 77).unwrap();
    let mut worst_z_mc: f64 = 0.0;
    for i in 0..d {
        for j in 0..d {
            let z = (mc[(i, j)] - prior.cov[(i, j)]).abs() / se_mc[(i, j)].max(1e-300);
            assert!(z <= 3.0, "spin-up entry ({i},{j}): z = {z:.2}");
            worst_z_mc = worst_z_mc.max(z);
        }
    }
    println!(
        "ACCEPTANCE 12 random-time and spin-up Monte Carlo: PASS (worst |z| {worst_z:.2} / {worst_z_mc:.2})"
    );
}

/// The nearest-NSD compatibility repair: the known 2x2 shear example plus
/// fifty random cases produce SPD priors whose residual equals the
/// negative-semidefinite part of the original residual.
#[test]
fn criterion_13_compatibility_modification() {
    // Shear example: A stable, identity covariance incompatible.
    let a = DMatrix::from_row_slice(2, 2, &[-1.0, 3.0, 0.0, -2.0]);
    let gamma0 = DMatrix::identity(2, 2);
    let m0 = symmetric_part(&(&a * &gamma0 + &gamma0 * a.transpose()));
    let (m_minus, _) = nearest_nsd_split(&m0).unwrap();
    let (prior, delta, _) = make_compatible(&a, &gamma0, COMPAT_TOL).unwrap();
    assert!(prior.cov.symmetric_eigenvalues().min() > 0.0);
    assert!(delta.symmetric_eigenvalues().min() > 0.0);
    let residual = &a * &prior.cov + &prior.cov * a.transpose();
    assert!(residual.symmetric_eigenvalues().max() <= 1e-10);
    assert!((&residual - &m_minus).norm() <= 1e-9 * m0.norm());

    let mut worst: f64 = 0.0;
    for i in 0..50u64 {
        let mut rng = seeded_rng(1300 + i);
        let d = 2 + (i as usize) % 9;
        let a = random_stable(d, &mut rng);
        let gamma0 = random_spd(d, &mut rng);
        let m0 = symmetric_part(&(&a * &gamma0 + &gamma0 * a.transpose()));
        let (m_minus, _) = nearest_nsd_split(&m0).unwrap();
        let (prior, delta, e) = make_compatible(&a, &gamma0, COMPAT_TOL).unwrap();
        assert!(prior.cov.symmetric_eigenvalues().min() > 0.0, "case {i}");
        let residual = &a * &prior.cov + &prior.cov * a.transpose();
        let err = (&residual - &m_minus).norm() / m0.norm();
        assert!(err <= 1e-9, "case {i}: residual deviation {err:.3e}");
        worst = worst.max(err);
        // Delta is PSD and consistent with its returned factor.
        if delta.norm() > 0.0 {
            assert!(delta.symmetric_eigenvalues().min() >= -1e-12 * delta.norm());
            assert!((&e * e.transpose() - &delta).norm() <= 1e-12 * delta.norm());
        }
    }
    println!("ACCEPTANCE 13 compatibility modification: PASS (worst residual deviation {worst:.2e})");
}

/// The structural-model benchmark runs only when its matrices are supplied
/// (env `BTINFER_ISS_DIR` or `benchmarks/iss1r/`); otherwise the loader is
/// exercised on synthetic files and the case is reported as skipped.
#[test]
fn criterion_14_structural_benchmark_or_loader() {
    let dir = std::env::var("BTINFER_ISS_DIR")
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|_| std::path::PathBuf::from("benchmarks/iss1r"));
    let have_files = ["A.mtx", "B.mtx", "C.mtx"]
        .iter()
        .all(|f| dir.join(f).exists());

    if have_files {
        let paths = btinfer::bench::SystemPaths {
            a: dir.join("A.mtx"),
            b: Some(dir.join("B.mtx")),
            c: dir.join("C.mtx"),
            noise: btinfer::bench::NoiseSpec::DiagonalVariances(vec![
                0.0025f64.powi(2),
                0.0005f64.powi(2),
                0.0005f64.powi(2),
            ]),
        };
        let sys = btinfer::bench::load_system(&paths).unwrap();
        let rel_good = rel_frob_diff(&sys, 0.1, 3000, FisherMode::Auto);
        let rel_bad = rel_frob_diff(&sys, 1.0, 10, FisherMode::Auto);
        assert!(
            (0.003..=0.05).contains(&rel_good),
            "dense case rel_frob_diff {rel_good:.4e} outside [0.003, 0.05]"
        );
        assert!(
            (0.25..=0.85).contains(&rel_bad),
            "sparse case rel_frob_diff {rel_bad:.4e} outside [0.25, 0.85]"
        );
        println!(
            "ACCEPTANCE 14 structural benchmark: PASS (rel diffs {rel_good:.3e} / {rel_bad:.3e})"
        );
    } else {
        // Loader round-trip on synthetic files stands in for the benchmark.
        let tmp = std::env::temp_dir().join(format!("btinfer-iss-{}", std::process::id()));
        std::fs::create_dir_all(&tmp).unwrap();
        let mut rng = seeded_rng(1400);
        let sys = random_minimal_system(7, 3, 3, &mut rng);
        btinfer::bench::export_system(&sys, &tmp).unwrap();
        let loaded = btinfer::bench::load_system(&btinfer::bench::SystemPaths {
            a: tmp.join("A.mtx"),
            b: Some(tmp.join("B.mtx")),
            c: tmp.join("C.mtx"),
            noise: btinfer::bench::NoiseSpec::DiagonalVariances(vec![
                0.0025f64.powi(2),
                0.0005f64.powi(2),
                0.0005f64.powi(2),
            ]),
        })
        .unwrap();
        assert_eq!(loaded.a(), sys.a());
        assert_eq!(loaded.b().unwrap(), sys.b().unwrap());
        assert_eq!(loaded.c(), sys.c());
        let _ = std::fs::remove_dir_all(&tmp);
        println!(
            "ACCEPTANCE 14 structural benchmark: SKIPPED (no benchmark matrices at {}; loader round-trip verified)",
            dir.display()
        );
    }
}
