//! Independent reference solutions shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use alip_mpc::constraints::{ConstraintTag, InequalityRow, LinearInequalitySet};
use alip_mpc::mpc::QpProblem;
use nalgebra::{DMatrix, DVector};

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

pub fn scenario_files() -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    v.sort();
    v
}

/// Finite-horizon backward dynamic programming in gain form, starting from a
/// zero terminal cost. Returns the cost-to-go after `stages` stages.
pub fn value_iteration(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    stages: usize,
) -> DMatrix<f64> {
    let n = a.nrows();
    let mut p = DMatrix::zeros(n, n);
    for _ in 0..stages {
        let k = (r + b.transpose() * &p * b).lu().solve(&(b.transpose() * &p * a)).unwrap();
        let acl = a - b * &k;
        p = q + k.transpose() * r * &k + acl.transpose() * &p * &acl;
        p = (&p + p.transpose()) * 0.5;
    }
    p
}

/// Strictly convex QP whose rows all admit `u = 0`, so the feasible set is
/// non-empty. `seed` needs `n*n + n + m*n + m` entries.
pub fn random_qp(seed: &[f64], n: usize, m: usize) -> QpProblem {
    let (h_raw, rest) = seed.split_at(n * n);
    let (f, rest) = rest.split_at(n);
    let (g, h) = rest.split_at(m * n);
    let l = DMatrix::from_column_slice(n, n, h_raw);
    let hessian = &l * l.transpose() + DMatrix::identity(n, n) * 0.1;
    let mut set = LinearInequalitySet::new(n);
    for r in 0..m {
        set.rows.push(InequalityRow {
            coeffs: g[r * n..(r + 1) * n].to_vec(),
            upper: h[r].abs() * 0.5,
            tag: ConstraintTag::InputX,
            index: r,
        });
    }
    QpProblem {
        hessian,
        gradient: DVector::from_column_slice(f) * 3.0,
        constraints: set,
    }
}

/// Brute-force minimizer: try every active set of size at most `n`, keep the
/// candidates satisfying all KKT conditions, return the best one.
pub fn enumerate_qp(qp: &QpProblem) -> Option<DVector<f64>> {
    let n = qp.n_vars();
    let m = qp.constraints.len();
    let rows = &qp.constraints.rows;
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut subset = Vec::new();
    fn visit(
        start: usize,
        m: usize,
        n: usize,
        subset: &mut Vec<usize>,
        check: &mut dyn FnMut(&[usize]),
    ) {
        check(subset);
        if subset.len() == n {
            return;
        }
        for i in start..m {
            subset.push(i);
            visit(i + 1, m, n, subset, check);
            subset.pop();
        }
    }
    let mut check = |s: &[usize]| {
        let k = s.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        let mut rhs = DVector::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&qp.hessian);
        for i in 0..n {
            rhs[i] = -qp.gradient[i];
        }
        for (c, &r) in s.iter().enumerate() {
            for i in 0..n {
                kkt[(n + c, i)] = rows[r].coeffs[i];
                kkt[(i, n + c)] = rows[r].coeffs[i];
            }
            rhs[n + c] = rows[r].upper;
        }
        let Some(sol) = kkt.full_piv_lu().solve(&rhs) else { return };
        let u = sol.rows(0, n).into_owned();
        if (0..k).any(|c| sol[n + c] < -1e-9) {
            return;
        }
        if rows.iter().any(|r| r.slack(u.as_slice()) < -1e-9) {
            return;
        }
        let obj = qp.objective(&u);
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, u));
        }
    };
    visit(0, m, n, &mut subset, &mut check);
    best.map(|(_, u)| u)
}
