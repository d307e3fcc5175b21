//! Dense strictly convex QP solver.
//!
//! Solves `min 1/2 u'Hu + f'u  s.t.  G u <= h` with the dual active-set method
//! of Goldfarb and Idnani: start from the unconstrained minimizer, repeatedly
//! add the most violated row, and drop rows whose multipliers would turn
//! negative. Every iterate is optimal for the rows currently active, so the
//! method detects infeasibility when a violated row cannot be added.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraints::LinearInequalitySet;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("hessian is {rows}x{cols}, gradient has {gradient} entries, constraints act on {constraint_vars} variables")]
    DimensionMismatch {
        rows: usize,
        cols: usize,
        gradient: usize,
        constraint_vars: usize,
    },
    #[error("hessian is not positive definite")]
    NotPositiveDefinite,
    #[error("non-finite problem data")]
    NonFinite,
}

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub constraints: LinearInequalitySet,
}

impl QpProblem {
    pub fn n_vars(&self) -> usize {
        self.gradient.len()
    }

    pub fn objective(&self, u: &DVector<f64>) -> f64 {
        0.5 * u.dot(&(&self.hessian * u)) + self.gradient.dot(u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

impl QpStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            QpStatus::Optimal => "optimal",
            QpStatus::Infeasible => "infeasible",
            QpStatus::MaxIterations => "max-iterations",
        }
    }
}

/// KKT residuals of a returned point.
///
/// `primal` is the largest row violation. `dual` is the stationarity residual
/// `|Hu + f + G'lambda|_inf` divided by `max(1, |f|_inf, |Hu|_inf)` so it is
/// comparable across weight scalings. `complementarity` is
/// `max |lambda_j (h_j - g_j'u)|`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktResiduals {
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub const PRIMAL_TOL: f64 = 1e-6;
    pub const DUAL_TOL: f64 = 1e-6;
    pub const COMPLEMENTARITY_TOL: f64 = 1e-8;

    pub fn within_contract(&self) -> bool {
        self.primal <= Self::PRIMAL_TOL
            && self.dual <= Self::DUAL_TOL
            && self.complementarity <= Self::COMPLEMENTARITY_TOL
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub primal: DVector<f64>,
    /// One multiplier per inequality row; zero off the active set.
    pub multipliers: DVector<f64>,
    pub active_set: Vec<usize>,
    pub status: QpStatus,
    pub residuals: KktResiduals,
    pub iterations: usize,
    /// For infeasible problems: the row that could not be satisfied followed
    /// by the active rows that block it.
    pub certificate: Vec<usize>,
}

struct Workspace<'a> {
    n: usize,
    chol: Cholesky<f64, Dyn>,
    /// Rows of G.
    g: DMatrix<f64>,
    h: DVector<f64>,
    f: &'a DVector<f64>,
}

impl Workspace<'_> {
    /// `L^-1 v` for the Cholesky factor `H = L L'`.
    fn l_solve(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol
            .l()
            .solve_lower_triangular(v)
            .expect("cholesky factor has a positive diagonal")
    }

    fn lt_solve(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol
            .l()
            .tr_solve_lower_triangular(v)
            .expect("cholesky factor has a positive diagonal")
    }

    /// Normal of row `j` in the `n'x >= b` convention, i.e. `-g_j`.
    fn normal(&self, j: usize) -> DVector<f64> {
        -self.g.row(j).transpose()
    }

    fn slacks(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.h - &self.g * x
    }

    /// Normals of the active rows mapped through `L^-1`, as columns.
    fn scaled_normals(&self, active: &[usize]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, active.len());
        for (c, &j) in active.iter().enumerate() {
            m.set_column(c, &self.l_solve(&self.normal(j)));
        }
        m
    }

    /// Minimizer with `active` rows held as equalities and their multipliers.
    /// `None` if the active normals are linearly dependent.
    fn equality_solve(&self, active: &[usize]) -> Option<(DVector<f64>, DVector<f64>)> {
        let ft = self.l_solve(self.f);
        if active.is_empty() {
            return Some((self.lt_solve(&(-ft)), DVector::zeros(0)));
        }
        let nt = self.scaled_normals(active);
        // N'H^-1N u = b + N'H^-1 f, with b_j = -h_j
        let b = DVector::from_iterator(active.len(), active.iter().map(|&j| -self.h[j]));
        let rhs = b + nt.transpose() * &ft;
        let gram = nt.transpose() * &nt;
        let chol = Cholesky::new(gram)?;
        let diag_min = chol.l().diagonal().min();
        let diag_max = chol.l().diagonal().max();
        if !(diag_min > 1e-8 * diag_max) {
            return None;
        }
        let u = chol.solve(&rhs);
        let x = self.lt_solve(&(-ft + &nt * &u));
        Some((x, u))
    }
}

/// Solve `qp`, optionally seeding the active set (e.g. from the previous
/// receding-horizon solve). A seed that is not dual feasible is pruned; the
/// result does not depend on it beyond iteration count.
pub fn solve_qp(qp: &QpProblem, warm_start: Option<&[usize]>) -> Result<QpSolution, QpError> {
    let n = qp.n_vars();
    let m = qp.constraints.len();
    if qp.hessian.nrows() != n
        || qp.hessian.ncols() != n
        || (m > 0 && qp.constraints.n_vars != n)
        || qp.constraints.rows.iter().any(|r| r.coeffs.len() != n)
    {
        return Err(QpError::DimensionMismatch {
            rows: qp.hessian.nrows(),
            cols: qp.hessian.ncols(),
            gradient: n,
            constraint_vars: qp.constraints.n_vars,
        });
    }
    if qp.hessian.iter().chain(qp.gradient.iter()).any(|v| !v.is_finite())
        || qp
            .constraints
            .rows
            .iter()
            .any(|r| !r.upper.is_finite() || r.coeffs.iter().any(|v| !v.is_finite()))
    {
        return Err(QpError::NonFinite);
    }
    let sym = (&qp.hessian + qp.hessian.transpose()) * 0.5;
    let chol = Cholesky::new(sym).ok_or(QpError::NotPositiveDefinite)?;

    let mut g = DMatrix::zeros(m, n);
    let mut h = DVector::zeros(m);
    for (i, row) in qp.constraints.rows.iter().enumerate() {
        for (j, &a) in row.coeffs.iter().enumerate() {
            g[(i, j)] = a;
        }
        h[i] = row.upper;
    }
    let row_norms: Vec<f64> = (0..m).map(|i| g.row(i).norm()).collect();
    let ws = Workspace {
        n,
        chol,
        g,
        h,
        f: &qp.gradient,
    };

    let (mut x, mut active, mut u) = warm_point(&ws, warm_start, m);
    let max_iter = 10 * (m + n) + 100;
    let mut iterations = 0;

    loop {
        iterations += 1;
        if iterations > max_iter {
            return Ok(finish(qp, &ws, x, &active, &u, QpStatus::MaxIterations, iterations, Vec::new()));
        }
        // most violated row, normalized by its coefficient norm
        let slack = ws.slacks(&x);
        let x_scale = x.amax().max(1.0);
        let mut pick: Option<(usize, f64)> = None;
        for j in 0..m {
            let tol = 1e-10 * (1.0 + ws.h[j].abs()).max(row_norms[j] * x_scale);
            if slack[j] >= -tol || active.contains(&j) {
                continue;
            }
            if row_norms[j] == 0.0 {
                return Ok(finish(qp, &ws, x, &active, &u, QpStatus::Infeasible, iterations, vec![j]));
            }
            let v = slack[j] / row_norms[j];
            if pick.is_none_or(|(_, best)| v < best) {
                pick = Some((j, v));
            }
        }
        let Some((p, _)) = pick else {
            return Ok(finish(qp, &ws, x, &active, &u, QpStatus::Optimal, iterations, Vec::new()));
        };

        let np = ws.normal(p);
        let np_t = ws.l_solve(&np);
        let mut u_p = 0.0;
        // add p, dropping blocking rows along the way
        loop {
            let (resid, r) = if active.is_empty() {
                (np_t.clone(), DVector::zeros(0))
            } else {
                let nt = ws.scaled_normals(&active);
                let qr = nt.clone().qr();
                let qtb = qr.q().transpose() * &np_t;
                let r = qr
                    .r()
                    .solve_upper_triangular(&qtb)
                    .unwrap_or_else(|| DVector::zeros(active.len()));
                let resid = &np_t - &nt * &r;
                (resid, r)
            };
            // z' n_p equals |resid|^2; a vanishing residual means p is
            // linearly dependent on the active rows
            let z = ws.lt_solve(&resid);
            let z_dot = resid.norm_squared();
            let full_step = if resid.norm() > 1e-10 * np_t.norm() {
                let s_p = ws.h[p] - ws.g.row(p).transpose().dot(&x);
                Some(-s_p / z_dot)
            } else {
                None
            };
            let mut partial: Option<(usize, f64)> = None;
            for (k, &rk) in r.iter().enumerate() {
                if rk > 0.0 {
                    let t = u[k] / rk;
                    if partial.is_none_or(|(_, best)| t < best) {
                        partial = Some((k, t));
                    }
                }
            }
            match (full_step, partial) {
                (None, None) => {
                    let mut cert = vec![p];
                    cert.extend(active.iter().copied());
                    return Ok(finish(qp, &ws, x, &active, &u, QpStatus::Infeasible, iterations, cert));
                }
                (None, Some((k, t))) => {
                    // pure dual step
                    for (ui, ri) in u.iter_mut().zip(r.iter()) {
                        *ui -= t * ri;
                    }
                    u_p += t;
                    active.remove(k);
                    u = remove_entry(&u, k);
                }
                (Some(t2), partial) => {
                    let (t, drop) = match partial {
                        Some((k, t1)) if t1 < t2 => (t1, Some(k)),
                        _ => (t2, None),
                    };
                    x += &z * t;
                    for (ui, ri) in u.iter_mut().zip(r.iter()) {
                        *ui -= t * ri;
                    }
                    u_p += t;
                    match drop {
                        Some(k) => {
                            active.remove(k);
                            u = remove_entry(&u, k);
                        }
                        None => {
                            active.push(p);
                            u = push_entry(&u, u_p);
                            break;
                        }
                    }
                }
            }
            iterations += 1;
            if iterations > max_iter {
                return Ok(finish(qp, &ws, x, &active, &u, QpStatus::MaxIterations, iterations, Vec::new()));
            }
        }
        // clean up drift: exact minimizer on the active set
        if let Some((xe, ue)) = ws.equality_solve(&active) {
            if ue.iter().all(|&v| v >= 0.0) {
                x = xe;
                u = ue;
            }
        }
    }
}

/// Starting point: the unconstrained minimizer, or the equality-constrained
/// minimizer on the largest dual-feasible subset of the seed.
fn warm_point(ws: &Workspace<'_>, seed: Option<&[usize]>, m: usize) -> (DVector<f64>, Vec<usize>, DVector<f64>) {
    let cold = || {
        let (x, u) = ws.equality_solve(&[]).expect("unconstrained solve");
        (x, Vec::new(), u)
    };
    let Some(seed) = seed else {
        return cold();
    };
    let mut active: Vec<usize> = Vec::new();
    for &j in seed {
        if j < m && !active.contains(&j) {
            active.push(j);
        }
    }
    active.truncate(ws.n);
    while !active.is_empty() {
        let Some((x, u)) = ws.equality_solve(&active) else {
            return cold();
        };
        match u.iter().enumerate().filter(|(_, &v)| v < 0.0).min_by(|a, b| a.1.total_cmp(b.1)) {
            None => return (x, active, u),
            Some((k, _)) => {
                active.remove(k);
            }
        }
    }
    cold()
}

fn remove_entry(v: &DVector<f64>, k: usize) -> DVector<f64> {
    DVector::from_iterator(
        v.len() - 1,
        v.iter().enumerate().filter(|(i, _)| *i != k).map(|(_, x)| *x),
    )
}

fn push_entry(v: &DVector<f64>, x: f64) -> DVector<f64> {
    DVector::from_iterator(v.len() + 1, v.iter().copied().chain(std::iter::once(x)))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    qp: &QpProblem,
    ws: &Workspace<'_>,
    x: DVector<f64>,
    active: &[usize],
    u: &DVector<f64>,
    status: QpStatus,
    iterations: usize,
    certificate: Vec<usize>,
) -> QpSolution {
    let m = ws.h.len();
    let mut multipliers = DVector::zeros(m);
    for (k, &j) in active.iter().enumerate() {
        multipliers[j] = u[k].max(0.0);
    }
    let slack = ws.slacks(&x);
    let primal = slack.iter().fold(0.0f64, |acc, &s| acc.max(-s));
    let hx = &qp.hessian * &x;
    let stationarity = &hx + &qp.gradient + ws.g.transpose() * &multipliers;
    let scale = 1f64.max(qp.gradient.amax()).max(hx.amax());
    let complementarity = multipliers
        .iter()
        .zip(slack.iter())
        .fold(0.0f64, |acc, (l, s)| acc.max((l * s).abs()));
    let mut active_set = active.to_vec();
    active_set.sort_unstable();
    QpSolution {
        primal: x,
        multipliers,
        active_set,
        status,
        residuals: KktResiduals {
            primal,
            dual: stationarity.amax() / scale,
            complementarity,
        },
        iterations,
        certificate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{ConstraintTag, InequalityRow};

    fn row(coeffs: Vec<f64>, upper: f64) -> InequalityRow {
        InequalityRow {
            coeffs,
            upper,
            tag: ConstraintTag::InputX,
            index: 0,
        }
    }

    fn problem(h: DMatrix<f64>, f: DVector<f64>, rows: Vec<InequalityRow>) -> QpProblem {
        let n = f.len();
        QpProblem {
            hessian: h,
            gradient: f,
            constraints: LinearInequalitySet { n_vars: n, rows },
        }
    }

    #[test]
    fn unconstrained_is_newton_step() {
        let h = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let f = DVector::from_vec(vec![1.0, -2.0]);
        let qp = problem(h.clone(), f.clone(), vec![]);
        let sol = solve_qp(&qp, None).unwrap();
        let want = -h.try_inverse().unwrap() * f;
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.primal - want).amax() < 1e-12);
        assert!(sol.active_set.is_empty());
    }

    #[test]
    fn clamps_one_dimensional_problem() {
        // (u - 1)^2 = u^2 - 2u + 1 -> H = 2, f = -2
        let qp = problem(
            DMatrix::from_element(1, 1, 2.0),
            DVector::from_element(1, -2.0),
            vec![row(vec![1.0], 0.3)],
        );
        let sol = solve_qp(&qp, None).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.primal[0] - 0.3).abs() < 1e-14);
        assert_eq!(sol.active_set, vec![0]);
        assert!((sol.multipliers[0] - 1.4).abs() < 1e-12);
        assert!(sol.residuals.within_contract());
    }

    #[test]
    fn detects_infeasibility() {
        let qp = problem(
            DMatrix::identity(1, 1),
            DVector::zeros(1),
            vec![row(vec![1.0], -1.0), row(vec![-1.0], -1.0)],
        );
        let sol = solve_qp(&qp, None).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
        let mut cert = sol.certificate.clone();
        cert.sort_unstable();
        assert_eq!(cert, vec![0, 1]);
    }

    #[test]
    fn zero_row_with_negative_bound_is_infeasible() {
        let qp = problem(DMatrix::identity(2, 2), DVector::zeros(2), vec![row(vec![0.0, 0.0], -1.0)]);
        let sol = solve_qp(&qp, None).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
        assert_eq!(sol.certificate, vec![0]);
    }

    #[test]
    fn warm_start_matches_cold_start() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let f = DVector::from_vec(vec![-4.0, -4.0]);
        let rows = vec![
            row(vec![1.0, 1.0], 1.0),
            row(vec![1.0, -1.0], 0.5),
            row(vec![-1.0, 0.0], 0.0),
        ];
        let qp = problem(h, f, rows);
        let cold = solve_qp(&qp, None).unwrap();
        let warm = solve_qp(&qp, Some(&cold.active_set)).unwrap();
        let bogus = solve_qp(&qp, Some(&[2, 1, 7])).unwrap();
        assert!((cold.primal.clone() - warm.primal).amax() < 1e-12);
        assert!((cold.primal - bogus.primal).amax() < 1e-12);
        assert!(warm.iterations <= cold.iterations);
    }

    #[test]
    fn rejects_indefinite_and_mismatched() {
        let qp = problem(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]),
            DVector::zeros(2),
            vec![],
        );
        assert!(matches!(solve_qp(&qp, None), Err(QpError::NotPositiveDefinite)));
        let qp = problem(DMatrix::identity(2, 2), DVector::zeros(3), vec![]);
        assert!(matches!(solve_qp(&qp, None), Err(QpError::DimensionMismatch { .. })));
    }

    #[test]
    fn degenerate_duplicate_rows() {
        let qp = problem(
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![-2.0, -2.0]),
            vec![
                row(vec![1.0, 0.0], 0.5),
                row(vec![1.0, 0.0], 0.5),
                row(vec![2.0, 0.0], 1.0),
                row(vec![0.0, 1.0], 0.25),
            ],
        );
        let sol = solve_qp(&qp, None).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.primal[0] - 0.5).abs() < 1e-12);
        assert!((sol.primal[1] - 0.25).abs() < 1e-12);
        assert!(sol.residuals.within_contract(), "{:?}", sol.residuals);
    }
}
