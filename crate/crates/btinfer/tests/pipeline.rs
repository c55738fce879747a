//! Cross-module integration checks that pair the reduced-model quantities
//! with their full-model counterparts.

use btinfer::inference::{
    fisher_information, sample_schedule, ObservationSchedule, ScheduleKind,
};
use btinfer::linalg::{mat_exp, sym_def_geig};
use btinfer::lti::{noisy_observability_gramian, spectral_abscissa, LtiSystem};
use btinfer::optimal::spantini_eigenpairs;
use btinfer::prior::spin_up_prior;
use btinfer::reduction::{bt_fisher_information, bt_q_reduce};
use btinfer::testing::{random_matrix, random_minimal_system, seeded_rng};
use nalgebra::DMatrix;

/// Under dense observation the reduced-model information matrix reproduces
/// the leading generalized eigenvalues of the full pencil.
#[test]
fn reduced_information_matches_leading_pencil_eigenvalues() {
    let mut rng = seeded_rng(2001);
    let d = 12;
    let sys = random_minimal_system(d, d, 1, &mut rng);
    let prior = spin_up_prior(sys.a(), sys.b().unwrap(), None).unwrap();
    let abscissa = spectral_abscissa(sys.a()).unwrap();
    let horizon = 40.0 / abscissa.abs();
    let n = 4000;
    let sched = sample_schedule(ScheduleKind::Equispaced, horizon / n as f64, n, 0).unwrap();
    let h = fisher_information(&sys, &sched).unwrap();
    let pencil = spantini_eigenpairs(&h, &prior).unwrap();

    let r = 5;
    let red = bt_q_reduce(&sys, &prior, r).unwrap();
    let h_bt = bt_fisher_information(&red, &sys, &sched).unwrap();
    let bt_pairs = sym_def_geig(&h_bt, &prior.factor).unwrap();
    for i in 0..r {
        let rel = (bt_pairs.values[i] - pencil.tau_sq[i]).abs() / pencil.tau_sq[i];
        assert!(
            rel <= 0.02,
            "pair {i}: reduced {:.6e} vs full {:.6e}",
            bt_pairs.values[i],
            pencil.tau_sq[i]
        );
    }
}

/// Averaging the rescaled information over per-subinterval uniform times
/// recovers the Gramian entrywise within three standard errors.
#[test]
fn uniform_subinterval_mean_information_matches_gramian() {
    let mut rng = seeded_rng(2002);
    let d = 3;
    let a = {
        let q = btinfer::testing::random_orthogonal(d, &mut rng);
        let diag = DMatrix::from_diagonal(&nalgebra::dvector![-0.6, -1.0, -1.7]);
        &q * diag * q.transpose()
    };
    let c = random_matrix(1, d, &mut rng);
    let sys = LtiSystem::new(a.clone(), None, c, DMatrix::identity(1, 1)).unwrap();
    let q_m = noisy_observability_gramian(&sys).unwrap();

    let gap = 0.3;
    let reps = 500u64;
    let mut sum = DMatrix::<f64>::zeros(d, d);
    let mut sum_sq = DMatrix::<f64>::zeros(d, d);
    for rep in 0..reps {
        let sched = sample_schedule(ScheduleKind::UniformSubinterval, gap, 200, 8100 + rep).unwrap();
        // Truncate once the propagator is negligible.
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
        let sub = ObservationSchedule::explicit(sched.times[..cut].to_vec()).unwrap();
        let sample = fisher_information(&sys, &sub).unwrap() * gap;
        sum += &sample;
        sum_sq += sample.component_mul(&sample);
    }
    let n = reps as f64;
    let mean = &sum / n;
    let var = (&sum_sq / n - mean.component_mul(&mean)).map(|v| v.max(0.0));
    let se = (var / (n - 1.0)).map(f64::sqrt);
    for i in 0..d {
        for j in 0..d {
            let z = (mean[(i, j)] - q_m[(i, j)]).abs() / se[(i, j)].max(1e-300);
            assert!(z <= 3.0, "entry ({i},{j}): z = {z:.2}");
        }
    }
}
