//! Elimination of the predicted states: every intra-step sample becomes an
//! affine function of the stacked foot placements.

use nalgebra::{DMatrix, DVector, Matrix4, Vector2, Vector4};

use super::{MpcConfig, MpcError};
use crate::alip::{impact_matrix, step_transition, AlipState, RobotParams, StanceSide, TerrainPlane};
use crate::constraints::{
    build_input_constraints, build_state_constraints, AffineRow, HorizonGeometry, LinearInequalitySet,
    SampleAffine,
};
use crate::mpc::qp::QpProblem;
use crate::reference::DesiredImpactState;

/// `x_i = Phi_i x0 + Gamma_i U` for `i = 0..=N_s N_dt`.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub samples_per_step: usize,
    pub phi: Vec<Matrix4<f64>>,
    pub gamma: Vec<DMatrix<f64>>,
}

impl Prediction {
    pub fn build(
        params: &RobotParams,
        terrains: &[TerrainPlane],
        samples_per_step: usize,
    ) -> Result<Self, MpcError> {
        let n_steps = terrains.len();
        let n_vars = 2 * n_steps;
        let dt = params.step_period / samples_per_step as f64;
        let transitions: Vec<Matrix4<f64>> = terrains
            .iter()
            .map(|t| step_transition(params, t, dt))
            .collect::<Result<_, _>>()?;
        let b = impact_matrix();

        let total = n_steps * samples_per_step;
        let mut phi = Vec::with_capacity(total + 1);
        let mut gamma = Vec::with_capacity(total + 1);
        phi.push(Matrix4::identity());
        gamma.push(DMatrix::zeros(4, n_vars));
        for i in 0..total {
            let step = i / samples_per_step;
            let a = &transitions[step];
            let mut g = gamma[i].clone();
            if i % samples_per_step == 0 {
                for c in 0..2 {
                    for r in 0..4 {
                        g[(r, 2 * step + c)] += b[(r, c)];
                    }
                }
            }
            let a_dyn = DMatrix::from_column_slice(4, 4, a.as_slice());
            gamma.push(a_dyn * g);
            phi.push(a * phi[i]);
        }
        Ok(Self {
            samples_per_step,
            phi,
            gamma,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.phi.len() - 1
    }

    pub fn state(&self, i: usize, x0: &AlipState, u: &DVector<f64>) -> AlipState {
        let v: Vector4<f64> = self.phi[i] * x0.to_vector();
        let w = &self.gamma[i] * u;
        AlipState::new(v[0] + w[0], v[1] + w[1], v[2] + w[2], v[3] + w[3])
    }

    pub fn states(&self, x0: &AlipState, u: &DVector<f64>) -> Vec<AlipState> {
        (0..self.phi.len()).map(|i| self.state(i, x0, u)).collect()
    }

    /// CoM offsets at samples `1..=N` as affine rows for the constraint
    /// builders. With `post_impact`, each step block also starts with the
    /// post-impact state `x_{j N_dt} + B u_j`, so the step blocks stay contiguous.
    pub fn geometry(&self, x0: &AlipState, post_impact: bool) -> HorizonGeometry {
        let n_vars = self.gamma[0].ncols();
        let n_steps = n_vars / 2;
        let x0v = x0.to_vector();
        let affine = |i: usize, k: usize, shift: Option<usize>| {
            let mut coeffs: Vec<f64> = self.gamma[i].row(k).iter().copied().collect();
            if let Some(j) = shift {
                // impact map subtracts the placement from the CoM offset
                coeffs[2 * j + k] -= 1.0;
            }
            AffineRow {
                coeffs,
                constant: (self.phi[i] * x0v)[k],
            }
        };
        let mut samples = Vec::with_capacity(self.n_samples() + n_steps);
        for j in 0..n_steps {
            let first = j * self.samples_per_step;
            if post_impact {
                samples.push(SampleAffine {
                    index: first,
                    step: j,
                    x_c: affine(first, 0, Some(j)),
                    y_c: affine(first, 1, Some(j)),
                });
            }
            for i in first + 1..=first + self.samples_per_step {
                samples.push(SampleAffine {
                    index: i,
                    step: j,
                    x_c: affine(i, 0, None),
                    y_c: affine(i, 1, None),
                });
            }
        }
        HorizonGeometry {
            n_vars,
            n_steps,
            samples,
        }
    }
}

/// Condensed QP together with the prediction it was built from.
#[derive(Debug, Clone)]
pub struct Condensed {
    pub qp: QpProblem,
    pub prediction: Prediction,
    /// Constant part of the tracking cost, so `J = 2 (qp objective) + constant`
    /// up to the regularization term.
    pub cost_constant: f64,
}

/// Build the QP over `U = [u_0; ...; u_{N_s-1}]`.
///
/// `desired[j]` and `terrains[j]` refer to horizon step `j`, the step begun by
/// placement `u_j`. Running weights sit on the impact samples `j N_dt`,
/// `j = 1..N_s-1`; `q_f` weighs the final sample.
pub fn condense(
    x0: &AlipState,
    desired: &[DesiredImpactState],
    config: &MpcConfig,
    params: &RobotParams,
    terrains: &[TerrainPlane],
    q_f: &Matrix4<f64>,
) -> Result<Condensed, MpcError> {
    config.validate()?;
    let n_steps = config.horizon_steps;
    if desired.len() != n_steps || terrains.len() != n_steps {
        return Err(MpcError::DimensionMismatch {
            what: "desired states / terrains per horizon step",
            expected: n_steps,
            got: desired.len().min(terrains.len()),
        });
    }
    for w in desired.windows(2) {
        if w[0].stance == w[1].stance {
            return Err(MpcError::StanceNotAlternating);
        }
    }
    if !x0.is_finite() {
        return Err(MpcError::NonFiniteState);
    }

    let prediction = Prediction::build(params, terrains, config.samples_per_step)?;
    let n_vars = 2 * n_steps;
    let x0v = x0.to_vector();
    let mut hessian = DMatrix::zeros(n_vars, n_vars);
    let mut gradient = DVector::zeros(n_vars);
    let mut cost_constant = 0.0;

    let q_step = DMatrix::from_column_slice(4, 4, config.q_step.as_slice());
    let q_term = DMatrix::from_column_slice(4, 4, q_f.as_slice());
    for (j, des) in desired.iter().enumerate() {
        let i = (j + 1) * config.samples_per_step;
        let q = if j + 1 == n_steps { &q_term } else { &q_step };
        let gamma = &prediction.gamma[i];
        let err0 = prediction.phi[i] * x0v - des.state.to_vector();
        let err0 = DVector::from_column_slice(err0.as_slice());
        let qg = q * gamma;
        hessian += gamma.transpose() * &qg;
        gradient += qg.transpose() * &err0;
        cost_constant += err0.dot(&(q * &err0));
    }
    for k in 0..n_vars {
        hessian[(k, k)] += config.regularization;
    }
    let hessian = (&hessian + hessian.transpose()) * 0.5;

    let constraints = match &config.workspace {
        None => LinearInequalitySet::new(n_vars),
        Some(ws) => {
            let stances: Vec<StanceSide> = desired.iter().map(|d| d.stance).collect();
            let mut set = build_state_constraints(ws, terrains, &stances, &prediction.geometry(x0, config.constrain_post_impact))?;
            set.extend(build_input_constraints(ws, &stances)?);
            set
        }
    };

    Ok(Condensed {
        qp: QpProblem {
            hessian,
            gradient,
            constraints,
        },
        prediction,
        cost_constant,
    })
}

/// Split the stacked placement vector into per-step 2-vectors.
pub fn unstack(u: &DVector<f64>) -> Vec<Vector2<f64>> {
    u.as_slice().chunks(2).map(|c| Vector2::new(c[0], c[1])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alip::apply_impact;
    use crate::mpc::TerminalWeight;
    use crate::reference::{desired_for_command, GaitCommand};

    fn config(n_steps: usize, n_dt: usize) -> MpcConfig {
        MpcConfig {
            horizon_steps: n_steps,
            samples_per_step: n_dt,
            ..MpcConfig::default()
        }
    }

    fn desired_seq(n: usize, first: StanceSide) -> Vec<DesiredImpactState> {
        let p = RobotParams::default();
        let t = TerrainPlane::default();
        let cmd = GaitCommand::forward(1.0, 0.3);
        let mut s = first;
        (0..n)
            .map(|_| {
                let d = desired_for_command(&cmd, s, &p, &t).unwrap();
                s = s.flipped();
                d
            })
            .collect()
    }

    #[test]
    fn condensed_map_matches_step_by_step_simulation() {
        let p = RobotParams::default();
        let t = TerrainPlane::default();
        let n_dt = 7;
        let terrains = [t; 3];
        let pred = Prediction::build(&p, &terrains, n_dt).unwrap();
        let x0 = AlipState::new(0.12, -0.1, 4.0, 22.0);
        let u = DVector::from_vec(vec![0.3, 0.25, 0.28, -0.3, 0.2, 0.31]);
        let a = step_transition(&p, &t, p.step_period / n_dt as f64).unwrap();
        let mut x = x0;
        for i in 0..pred.n_samples() {
            if i % n_dt == 0 {
                let j = i / n_dt;
                x = apply_impact(&x, &Vector2::new(u[2 * j], u[2 * j + 1]));
            }
            x = AlipState::from_vector(&(a * x.to_vector()));
            let got = pred.state(i + 1, &x0, &u);
            assert!((got.to_vector() - x.to_vector()).amax() < 1e-12, "sample {}", i + 1);
        }
    }

    #[test]
    fn hessian_scales_with_weights() {
        let p = RobotParams::default();
        let t = TerrainPlane::default();
        let mut cfg = config(3, 5);
        cfg.workspace = None;
        cfg.terminal = TerminalWeight::fixed(&Matrix4::identity());
        let x0 = AlipState::new(0.1, -0.12, 3.0, 20.0);
        let des = desired_seq(3, StanceSide::Right);
        let qf = Matrix4::identity();
        let a = condense(&x0, &des, &cfg, &p, &[t; 3], &qf).unwrap();
        let mut cfg2 = cfg.clone();
        cfg2.q_step *= 2.0;
        let b = condense(&x0, &des, &cfg2, &p, &[t; 3], &(qf * 2.0)).unwrap();
        let reg = DMatrix::identity(6, 6) * cfg.regularization;
        let ha = &a.qp.hessian - &reg;
        let hb = &b.qp.hessian - &reg;
        assert!((hb - ha * 2.0).amax() < 1e-9);
        assert!((b.qp.gradient - a.qp.gradient * 2.0).amax() < 1e-9);
    }

    #[test]
    fn rejects_non_alternating_stances() {
        let p = RobotParams::default();
        let t = TerrainPlane::default();
        let mut des = desired_seq(2, StanceSide::Left);
        des[1].stance = StanceSide::Left;
        let r = condense(&AlipState::zero(), &des, &config(2, 3), &p, &[t; 2], &Matrix4::identity());
        assert!(matches!(r, Err(MpcError::StanceNotAlternating)));
        let r = condense(&AlipState::zero(), &des[..1], &config(2, 3), &p, &[t; 2], &Matrix4::identity());
        assert!(matches!(r, Err(MpcError::DimensionMismatch { .. })));
    }

    #[test]
    fn row_counts() {
        let p = RobotParams::default();
        let t = TerrainPlane::default();
        let cfg = config(2, 4);
        let des = desired_seq(2, StanceSide::Right);
        let c = condense(&AlipState::zero(), &des, &cfg, &p, &[t; 2], &Matrix4::identity()).unwrap();
        // 8 state rows per sample, 4 input rows per step
        assert_eq!(c.qp.constraints.len(), 8 * 8 + 4 * 2);
        let cfg = MpcConfig {
            constrain_post_impact: true,
            ..cfg
        };
        let c = condense(&AlipState::zero(), &des, &cfg, &p, &[t; 2], &Matrix4::identity()).unwrap();
        assert_eq!(c.qp.constraints.len(), 8 * 10 + 4 * 2);
    }

    #[test]
    fn post_impact_rows_match_impact_map() {
        let p = RobotParams::default();
        let t = TerrainPlane::default();
        let pred = Prediction::build(&p, &[t; 2], 3).unwrap();
        let x0 = AlipState::new(0.2, -0.1, 3.0, 25.0);
        let u = DVector::from_vec(vec![0.4, 0.3, 0.35, -0.3]);
        let geo = pred.geometry(&x0, true);
        assert_eq!(geo.samples.len(), 8);
        // each block of 4 starts with the post-impact sample
        for s in geo.samples.iter().step_by(4) {
            let j = s.step;
            let post = apply_impact(&pred.state(s.index, &x0, &u), &Vector2::new(u[2 * j], u[2 * j + 1]));
            let eval = |r: &AffineRow| r.constant + r.coeffs.iter().zip(u.iter()).map(|(a, b)| a * b).sum::<f64>();
            assert!((eval(&s.x_c) - post.x_c).abs() < 1e-14);
            assert!((eval(&s.y_c) - post.y_c).abs() < 1e-14);
        }
    }
}
