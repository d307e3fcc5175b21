//! Derived values checked against independently computed references.

mod common;

use alip_mpc::alip::{
    com_dynamics_rhs, expm_oracle, build_alip_matrix, impact_matrix, integrate_com, step_transition, AlipState,
    CentroidalMomentum, ComVariant, RobotParams, StanceSide, TerrainPlane,
};
use alip_mpc::mpc::{
    condense, dare_terminal_cost, solve_qp, stack, DareMode, MpcConfig, QpStatus, TerminalWeight,
};
use alip_mpc::reference::{desired_for_command, GaitCommand};
use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector, Matrix2x4, Matrix4, Vector2, Vector4};

fn defaults() -> (RobotParams, TerrainPlane) {
    (RobotParams::default(), TerrainPlane::default())
}

#[test]
fn closed_form_transition_matches_expm_at_one_step() {
    let (p, t) = defaults();
    let a = build_alip_matrix(&p, &t).unwrap();
    let closed = step_transition(&p, &t, 0.3).unwrap();
    let oracle = expm_oracle(&a, 0.3).unwrap();
    assert!((closed - oracle).norm() <= 1e-10);
}

#[test]
fn exact_rhs_matches_picard_iteration() {
    let p = RobotParams::default();
    let t = TerrainPlane {
        k_x: 0.2,
        k_y: 0.1,
        ..TerrainPlane::default()
    };
    let s = AlipState::new(0.1, 0.05, 1.0, 5.0);
    let rhs = com_dynamics_rhs(&s, &CentroidalMomentum::zero(), &p, &t, ComVariant::ExactPre).unwrap();

    let m = p.mass;
    let z = t.k_x * s.x_c + t.k_y * s.y_c + t.z_h;
    let (mut vx, mut vy) = (0.0, 0.0);
    for _ in 0..200 {
        let vz = t.k_x * vx + t.k_y * vy;
        vx = (s.l_y / m + s.x_c * vz) / z;
        vy = (s.y_c * vz - s.l_x / m) / z;
    }
    assert!((rhs[0] - vx).abs() <= 1e-12);
    assert!((rhs[1] - vy).abs() <= 1e-12);
    let mg = m * p.gravity;
    assert_relative_eq!(rhs[2], -mg * s.y_c, max_relative = 1e-15);
    assert_relative_eq!(rhs[3], mg * s.x_c, max_relative = 1e-15);
}

#[test]
fn rk4_is_fourth_order() {
    let (p, t) = defaults();
    let x0 = AlipState::new(-0.12, 0.1, -5.0, 24.0);
    let exact = step_transition(&p, &t, 0.3).unwrap() * x0.to_vector();
    let err = |h: f64| {
        let tr = integrate_com(&x0, |_| CentroidalMomentum::zero(), &p, &t, 0.3, h, ComVariant::Alip).unwrap();
        (tr.final_state().to_vector() - exact).amax()
    };
    assert!(err(1e-3) <= 1e-8);
    let ratio = err(0.02) / err(0.01);
    assert!((14.0..18.0).contains(&ratio), "ratio {ratio}");
}

/// `L = m z_H v + m k (cross term)`: on a lateral slope the two models differ
/// only through `x_c y_c_dot - y_c x_c_dot`.
#[test]
fn exact_alip_gap_scales_with_cross_term() {
    let p = RobotParams::default();
    let t = TerrainPlane {
        k_x: 0.1,
        k_y: 0.15,
        ..TerrainPlane::default()
    };
    let lc = |_| CentroidalMomentum::zero();
    let run = |eps: f64| {
        let x0 = AlipState::new(-0.1, -0.15 * eps, -6.0 * eps, 25.0);
        let ex = integrate_com(&x0, lc, &p, &t, 0.3, 1e-3, ComVariant::ExactPre).unwrap();
        let al = integrate_com(&x0, lc, &p, &t, 0.3, 1e-3, ComVariant::Alip).unwrap();
        let gap = (ex.final_state().to_vector() - al.final_state().to_vector()).amax();
        let cross = ex
            .states
            .iter()
            .map(|s| {
                let d = com_dynamics_rhs(s, &CentroidalMomentum::zero(), &p, &t, ComVariant::ExactPre).unwrap();
                (s.x_c * d[1] - s.y_c * d[0]).abs()
            })
            .fold(0.0, f64::max);
        (gap, cross)
    };
    let (g1, c1) = run(1.0);
    let c = 2.0 * g1 / c1;
    let mut last = g1;
    for eps in [0.3, 0.1, 0.03, 0.01, 0.0] {
        let (g, cr) = run(eps);
        assert!(g <= c * cr + 1e-9, "eps {eps}: gap {g}, cross {cr}");
        assert!(g <= last);
        last = g;
    }
    assert!(last <= 1e-9);
}

#[test]
fn periodic_placements_have_zero_tracking_error() {
    let (p, t) = defaults();
    let cmd = GaitCommand::forward(1.0, 0.3);
    let cfg = MpcConfig::default();
    let n = cfg.horizon_steps;
    // pre-impact state at the end of a left-stance step
    let x0 = desired_for_command(&cmd, StanceSide::Left, &p, &t).unwrap().state;
    let mut side = StanceSide::Left;
    let desired: Vec<_> = (0..n)
        .map(|_| {
            side = side.flipped();
            desired_for_command(&cmd, side, &p, &t).unwrap()
        })
        .collect();
    // on the symmetric orbit the placement is (2 x_c*, -sigma W)
    let mut side = StanceSide::Left;
    let u: Vec<Vector2<f64>> = (0..n)
        .map(|_| {
            let v = Vector2::new(2.0 * x0.x_c, -side.sigma() * cmd.step_width);
            side = side.flipped();
            v
        })
        .collect();
    let (q_f, _) = dare_terminal_cost(&p, &t, &cfg.q_step, DareMode::OneStep, cfg.regularization).unwrap();
    let c = condense(&x0, &desired, &cfg, &p, &vec![t; n], &q_f).unwrap();
    let uv = stack(&u);
    for (j, d) in desired.iter().enumerate() {
        let x = c.prediction.state((j + 1) * cfg.samples_per_step, &x0, &uv);
        assert!((x.to_vector() - d.state.to_vector()).amax() <= 1e-10);
    }
    let sol = solve_qp(&c.qp, None).unwrap();
    assert_eq!(sol.status, QpStatus::Optimal);
    let total = 2.0 * c.qp.objective(&sol.primal) + c.cost_constant;
    let reg = cfg.regularization * uv.norm_squared();
    assert!(total <= reg + 1e-9, "{total} vs {reg}");
    assert!((&sol.primal - &uv).amax() <= 1e-6);
}

#[test]
fn single_sample_plan_solves_normal_equations() {
    let (p, t) = defaults();
    let cmd = GaitCommand::forward(0.7, 0.3);
    let cfg = MpcConfig {
        horizon_steps: 1,
        samples_per_step: 1,
        q_step: Matrix4::zeros(),
        terminal: TerminalWeight::fixed(&Matrix4::identity()),
        workspace: None,
        ..MpcConfig::default()
    };
    let x0 = AlipState::new(0.12, -0.14, 5.0, 21.0);
    let d = desired_for_command(&cmd, StanceSide::Right, &p, &t).unwrap();
    let c = condense(&x0, &[d], &cfg, &p, &[t], &Matrix4::identity()).unwrap();
    let sol = solve_qp(&c.qp, None).unwrap();

    let a = step_transition(&p, &t, p.step_period).unwrap();
    let m = DMatrix::from_column_slice(4, 2, (a * impact_matrix()).as_slice());
    let r: DVector<f64> = DVector::from_column_slice((a * x0.to_vector() - d.state.to_vector()).as_slice());
    let normal = m.transpose() * &m + DMatrix::identity(2, 2) * cfg.regularization;
    let u = normal.lu().solve(&(-(m.transpose() * r))).unwrap();
    assert!((&sol.primal - &u).amax() <= 1e-8 * (1.0 + u.amax()));
}

#[test]
fn dare_matches_value_iteration_for_identity_weight() {
    let (p, t) = defaults();
    let reg = 1e-9;
    let (pf, sol) = dare_terminal_cost(&p, &t, &Matrix4::identity(), DareMode::OneStep, reg).unwrap();
    let a = step_transition(&p, &t, p.step_period).unwrap();
    let b = a * impact_matrix();
    let oracle = common::value_iteration(
        &DMatrix::from_column_slice(4, 4, a.as_slice()),
        &DMatrix::from_column_slice(4, 2, b.as_slice()),
        &DMatrix::identity(4, 4),
        &(DMatrix::identity(2, 2) * reg),
        500,
    );
    let pf = DMatrix::from_column_slice(4, 4, pf.as_slice());
    assert!((pf - oracle).amax() <= 1e-8);
    assert!(sol.residual <= 1e-10);
}

#[test]
fn deadbeat_placement_reaches_target_momenta() {
    let (p, t) = defaults();
    let ad = step_transition(&p, &t, p.step_period).unwrap();
    for (x, target) in [
        (AlipState::new(0.2, -0.1, 3.0, 30.0), Vector2::new(-6.0, 25.0)),
        (AlipState::new(-0.05, 0.2, -8.0, -4.0), Vector2::new(6.5, 0.0)),
    ] {
        let u = alip_mpc::mpc::deadbeat_one_step(&x, target, &p, &t).unwrap();
        let post = Vector4::new(x.x_c - u.x, x.y_c - u.y, x.l_x, x.l_y);
        let sel = Matrix2x4::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let end = sel * (ad * post);
        assert!((end - target).amax() <= 1e-10);
    }
}
