//! Matrix exponential via scaling-and-squaring with Padé approximants.
//!
//! Follows Higham (2005), "The Scaling and Squaring Method for the Matrix
//! Exponential Revisited": the Padé degree is picked from {3, 5, 7, 9, 13}
//! using 1-norm thresholds, the argument is scaled by 2^-s so its norm falls
//! below theta_13, and the result is squared s times.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const THETA_3: f64 = 1.495585217958292e-2;
const THETA_5: f64 = 2.539_398_330_063_23e-1;
const THETA_7: f64 = 9.504178996162932e-1;
const THETA_9: f64 = 2.097847961257068e0;
const THETA_13: f64 = 5.371920351148152e0;

const B3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const B5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const B7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const B9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const B13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Computes `exp(A t)` for a square matrix `A`.
pub fn mat_exp(a: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::NonSquare {
            op: "mat_exp",
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    if !t.is_finite() || a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "mat_exp" });
    }
    let d = a.nrows();
    let m = a * t;
    if d == 1 {
        return Ok(DMatrix::from_element(1, 1, m[(0, 0)].exp()));
    }

    let norm = one_norm(&m);
    if norm <= THETA_3 {
        return Ok(pade_low(&m, &B3));
    }
    if norm <= THETA_5 {
        return Ok(pade_low(&m, &B5));
    }
    if norm <= THETA_7 {
        return Ok(pade_low(&m, &B7));
    }
    if norm <= THETA_9 {
        return Ok(pade_low(&m, &B9));
    }

    let s = if norm > THETA_13 {
        (norm / THETA_13).log2().ceil().max(0.0) as u32
    } else {
        0
    };
    let scaled = &m / 2f64.powi(s as i32);
    let mut f = pade13(&scaled);
    for _ in 0..s {
        f = &f * &f;
    }
    Ok(f)
}

/// Max absolute column sum.
fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Padé of degree 3, 5, 7 or 9: U odd part, V even part, solve (V-U)F = V+U.
fn pade_low(m: &DMatrix<f64>, b: &[f64]) -> DMatrix<f64> {
    let d = m.nrows();
    let eye = DMatrix::identity(d, d);
    let m2 = m * m;
    // even powers m^0, m^2, m^4, ...
    let n_even = b.len() / 2;
    let mut powers = Vec::with_capacity(n_even);
    powers.push(eye.clone());
    for k in 1..n_even {
        let next = &powers[k - 1] * &m2;
        powers.push(next);
    }
    let mut u_inner = DMatrix::zeros(d, d);
    let mut v = DMatrix::zeros(d, d);
    for k in 0..n_even {
        u_inner += &powers[k] * b[2 * k + 1];
        v += &powers[k] * b[2 * k];
    }
    let u = m * u_inner;
    solve_pade(u, v)
}

/// Padé of degree 13 with the factored evaluation of Higham (2005).
fn pade13(m: &DMatrix<f64>) -> DMatrix<f64> {
    let d = m.nrows();
    let eye = DMatrix::identity(d, d);
    let m2 = m * m;
    let m4 = &m2 * &m2;
    let m6 = &m2 * &m4;

    let u_high = &m6 * B13[13] + &m4 * B13[11] + &m2 * B13[9];
    let u_inner =
        &m6 * &u_high + &m6 * B13[7] + &m4 * B13[5] + &m2 * B13[3] + &eye * B13[1];
    let u = m * u_inner;

    let v_high = &m6 * B13[12] + &m4 * B13[10] + &m2 * B13[8];
    let v = &m6 * &v_high + &m6 * B13[6] + &m4 * B13[4] + &m2 * B13[2] + &eye * B13[0];

    solve_pade(u, v)
}

fn solve_pade(u: DMatrix<f64>, v: DMatrix<f64>) -> DMatrix<f64> {
    let lhs = &v - &u;
    let rhs = &v + &u;
    lhs.lu()
        .solve(&rhs)
        .expect("Padé denominator is nonsingular for norms below the degree threshold")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exp_of_zero_time_is_identity() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, -1.0, 0.5, 2.0, 0.0, 1.0, -2.0]);
        let e = mat_exp(&a, 0.0).unwrap();
        assert_relative_eq!(e, DMatrix::identity(3, 3), epsilon = 1e-15);
    }

    #[test]
    fn exp_of_diagonal() {
        let a = DMatrix::from_diagonal(&nalgebra::dvector![-1.0, -2.0]);
        let e = mat_exp(&a, 1.0).unwrap();
        assert_relative_eq!(e[(0, 0)], (-1.0f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(e[(1, 1)], (-2.0f64).exp(), max_relative = 1e-14);
        assert!(e[(0, 1)].abs() < 1e-16 && e[(1, 0)].abs() < 1e-16);
    }

    #[test]
    fn exp_of_nilpotent_truncates() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let e = mat_exp(&a, 1.0).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert_relative_eq!(e, expected, epsilon = 1e-15);
    }

    #[test]
    fn rejects_non_square_and_non_finite() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        assert!(mat_exp(&a, 1.0).is_err());
        let b = DMatrix::from_row_slice(2, 2, &[1.0, f64::NAN, 0.0, 1.0]);
        assert!(mat_exp(&b, 1.0).is_err());
        let c = DMatrix::identity(2, 2);
        assert!(mat_exp(&c, f64::INFINITY).is_err());
    }

    #[test]
    fn large_norm_uses_squaring() {
        // 2x2 with known exponential: A = [[0, w], [-w, 0]] -> rotation.
        let w = 40.0;
        let a = DMatrix::from_row_slice(2, 2, &[0.0, w, -w, 0.0]);
        let e = mat_exp(&a, 1.0).unwrap();
        assert_relative_eq!(e[(0, 0)], w.cos(), epsilon = 1e-11);
        assert_relative_eq!(e[(0, 1)], w.sin(), epsilon = 1e-11);
    }
}
