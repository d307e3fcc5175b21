use nalgebra::Matrix4;

use super::ModelError;

/// General 4x4 matrix exponential `exp(M t)` by balancing, scaling and
/// squaring, and a truncated Taylor series.
///
/// Independent of the closed-form hyperbolic solution in
/// [`step_transition`](super::step_transition); used to cross-check it.
pub fn expm_oracle(m: &Matrix4<f64>, t: f64) -> Result<Matrix4<f64>, ModelError> {
    if !t.is_finite() || m.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite("matrix exponential input"));
    }
    let mt = m * t;
    let (balanced, d) = balance(&mt);

    let norm = one_norm(&balanced);
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let x = balanced / 2f64.powi(squarings);

    let mut sum = Matrix4::identity();
    let mut term = Matrix4::identity();
    for k in 1..=40 {
        term = term * x / k as f64;
        sum += term;
        if one_norm(&term) <= f64::EPSILON * 1e-3 * one_norm(&sum) {
            break;
        }
    }
    for _ in 0..squarings {
        sum = sum * sum;
    }

    // undo the similarity: exp(M) = D exp(D^-1 M D) D^-1
    let mut out = sum;
    for i in 0..4 {
        for j in 0..4 {
            out[(i, j)] *= d[i] / d[j];
        }
    }
    Ok(out)
}

fn one_norm(m: &Matrix4<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Parlett-Reinsch balancing with power-of-two factors (exact in binary).
/// Returns `D^-1 M D` and the diagonal of `D`.
fn balance(m: &Matrix4<f64>) -> (Matrix4<f64>, [f64; 4]) {
    let mut b = *m;
    let mut d = [1.0; 4];
    let mut converged = false;
    let mut sweeps = 0;
    while !converged && sweeps < 100 {
        converged = true;
        sweeps += 1;
        for i in 0..4 {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..4 {
                if j != i {
                    c += b[(j, i)].abs();
                    r += b[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let mut g = r / 2.0;
            while c < g {
                f *= 2.0;
                c *= 4.0;
            }
            g = r * 2.0;
            while c >= g {
                f /= 2.0;
                c /= 4.0;
            }
            if (c + r) / f < 0.95 * s {
                converged = false;
                d[i] *= f;
                for j in 0..4 {
                    b[(i, j)] /= f;
                    b[(j, i)] *= f;
                }
            }
        }
    }
    (b, d)
}
