//! State and foot-placement constraint sets over the planning horizon,
//! written as linear inequalities `a^T U <= b` in the stacked placements `U`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alip::{StanceSide, TerrainPlane};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstraintError {
    #[error("slope {k} is not below the effective friction coefficient {mu_eff}; standing already slips")]
    SlopeExceedsFriction { k: f64, mu_eff: f64 },
    #[error("ground reaction ratio denominator {denominator} is not positive")]
    DegenerateGeometry { denominator: f64 },
    #[error("interval `{name}` is empty or non-finite: [{lower}, {upper}]")]
    EmptyInterval {
        name: &'static str,
        lower: f64,
        upper: f64,
    },
    #[error("friction safety factor must lie in (0, 1], got {0}")]
    InvalidSafetyFactor(f64),
    #[error("{what}: expected {expected} entries, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub const fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    pub fn mirrored(&self) -> Self {
        Self::new(-self.upper, -self.lower)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }

    /// Signed distance to the nearest bound; negative outside.
    pub fn margin(&self, v: f64) -> f64 {
        (v - self.lower).min(self.upper - v)
    }

    fn validate(&self, name: &'static str) -> Result<(), ConstraintError> {
        if self.lower.is_finite() && self.upper.is_finite() && self.lower <= self.upper {
            Ok(())
        } else {
            Err(ConstraintError::EmptyInterval {
                name,
                lower: self.lower,
                upper: self.upper,
            })
        }
    }
}

/// Mechanical boxes and the friction safety factor.
///
/// Lateral intervals are given for left stance; right stance uses the mirror
/// image so the feet never cross.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceConfig {
    pub x_c: Interval,
    pub y_c_left: Interval,
    pub u_x: Interval,
    /// Lateral placement while standing on the left foot.
    pub u_y_left: Interval,
    pub mu_safety_factor: f64,
}

impl Default for WorkspaceConfig {
    fn default() -> Self {
        Self {
            x_c: Interval::new(-0.5, 0.5),
            y_c_left: Interval::new(-0.35, -0.04),
            u_x: Interval::new(-0.6, 0.6),
            u_y_left: Interval::new(-0.45, -0.10),
            mu_safety_factor: std::f64::consts::FRAC_1_SQRT_2,
        }
    }
}

impl WorkspaceConfig {
    pub fn validate(&self) -> Result<(), ConstraintError> {
        self.x_c.validate("x_c")?;
        self.y_c_left.validate("y_c")?;
        self.u_x.validate("u_x")?;
        self.u_y_left.validate("u_y")?;
        if !(self.mu_safety_factor > 0.0 && self.mu_safety_factor <= 1.0) {
            return Err(ConstraintError::InvalidSafetyFactor(self.mu_safety_factor));
        }
        Ok(())
    }

    /// Lateral CoM interval while standing on `stance`.
    pub fn y_c_for(&self, stance: StanceSide) -> Interval {
        match stance {
            StanceSide::Left => self.y_c_left,
            StanceSide::Right => self.y_c_left.mirrored(),
        }
    }

    /// Lateral placement interval while standing on `stance`.
    pub fn u_y_for(&self, stance: StanceSide) -> Interval {
        match stance {
            StanceSide::Left => self.u_y_left,
            StanceSide::Right => self.u_y_left.mirrored(),
        }
    }

    /// Symmetric slip bounds `(x_c^slip, y_c^slip)` on `terrain`.
    pub fn slip_bounds(&self, terrain: &TerrainPlane) -> Result<(f64, f64), ConstraintError> {
        Ok((
            slip_bound(terrain.k_x, terrain.mu, terrain.z_h, self.mu_safety_factor)?,
            slip_bound(terrain.k_y, terrain.mu, terrain.z_h, self.mu_safety_factor)?,
        ))
    }
}

/// Physical origin of an inequality row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintTag {
    MechX,
    MechY,
    SlipX,
    SlipY,
    InputX,
    InputY,
}

impl fmt::Display for ConstraintTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ConstraintTag::MechX => "mech-x",
            ConstraintTag::MechY => "mech-y",
            ConstraintTag::SlipX => "slip-x",
            ConstraintTag::SlipY => "slip-y",
            ConstraintTag::InputX => "input-x",
            ConstraintTag::InputY => "input-y",
        };
        f.write_str(s)
    }
}

/// `coeffs . U <= upper`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityRow {
    pub coeffs: Vec<f64>,
    pub upper: f64,
    pub tag: ConstraintTag,
    /// Intra-step sample index for state rows, horizon step for input rows.
    pub index: usize,
}

impl InequalityRow {
    pub fn slack(&self, u: &[f64]) -> f64 {
        self.upper - self.coeffs.iter().zip(u).map(|(a, b)| a * b).sum::<f64>()
    }
}

impl fmt::Display for InequalityRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.tag, self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LinearInequalitySet {
    pub n_vars: usize,
    pub rows: Vec<InequalityRow>,
}

impl LinearInequalitySet {
    pub fn new(n_vars: usize) -> Self {
        Self {
            n_vars,
            rows: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn extend(&mut self, other: LinearInequalitySet) {
        debug_assert_eq!(self.n_vars, other.n_vars);
        self.rows.extend(other.rows);
    }

    /// Rows violated by more than `tol` at `u`.
    pub fn violations(&self, u: &[f64], tol: f64) -> Vec<&InequalityRow> {
        self.rows.iter().filter(|r| r.slack(u) < -tol).collect()
    }

    /// `a^T U <= b` with `a` a row of `lo <= a^T U + c <= hi`.
    fn push_two_sided(
        &mut self,
        coeffs: &[f64],
        constant: f64,
        bounds: Interval,
        tag: ConstraintTag,
        index: usize,
    ) {
        self.rows.push(InequalityRow {
            coeffs: coeffs.to_vec(),
            upper: bounds.upper - constant,
            tag,
            index,
        });
        self.rows.push(InequalityRow {
            coeffs: coeffs.iter().map(|a| -a).collect(),
            upper: constant - bounds.lower,
            tag,
            index,
        });
    }
}

/// Bound on the CoM offset along one axis from the linearized Coulomb cone.
///
/// `(mu' - k) z_H / (1 + k^2)` with `mu' = safety_factor * mu`.
pub fn slip_bound(k: f64, mu: f64, z_h: f64, safety_factor: f64) -> Result<f64, ConstraintError> {
    if !(safety_factor > 0.0 && safety_factor <= 1.0) {
        return Err(ConstraintError::InvalidSafetyFactor(safety_factor));
    }
    let mu_eff = safety_factor * mu;
    if !(mu_eff > k.abs()) {
        return Err(ConstraintError::SlopeExceedsFriction { k, mu_eff });
    }
    Ok((mu_eff - k) * z_h / (1.0 + k * k))
}

/// Tangential-to-normal force ratios `(F_x/F_z, F_y/F_z)` for a CoM moving
/// parallel to the terrain plane.
pub fn grf_ratios(x_c: f64, y_c: f64, terrain: &TerrainPlane) -> Result<(f64, f64), ConstraintError> {
    let d = terrain.k_x * x_c + terrain.k_y * y_c + terrain.z_h;
    if !(d > 0.0) {
        return Err(ConstraintError::DegenerateGeometry { denominator: d });
    }
    Ok((x_c / d, y_c / d))
}

/// Affine expression `coeffs . U + constant`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineRow {
    pub coeffs: Vec<f64>,
    pub constant: f64,
}

/// CoM offsets at one intra-step sample as affine functions of `U`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleAffine {
    /// Intra-step sample index `i >= 1`.
    pub index: usize,
    /// Horizon step containing the sample (0-based).
    pub step: usize,
    pub x_c: AffineRow,
    pub y_c: AffineRow,
}

/// The condensed horizon as seen by the constraint builders.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonGeometry {
    pub n_vars: usize,
    pub n_steps: usize,
    pub samples: Vec<SampleAffine>,
}

/// Mechanical boxes and slip limits at every intra-step sample.
///
/// `stances[j]` and `terrains[j]` describe horizon step `j`, i.e. the step
/// started by placement `j`.
pub fn build_state_constraints(
    config: &WorkspaceConfig,
    terrains: &[TerrainPlane],
    stances: &[StanceSide],
    geometry: &HorizonGeometry,
) -> Result<LinearInequalitySet, ConstraintError> {
    config.validate()?;
    check_len("stance sequence", geometry.n_steps, stances.len())?;
    check_len("terrain sequence", geometry.n_steps, terrains.len())?;

    let slip: Vec<(f64, f64)> = terrains
        .iter()
        .map(|t| config.slip_bounds(t))
        .collect::<Result<_, _>>()?;

    let mut set = LinearInequalitySet::new(geometry.n_vars);
    for s in &geometry.samples {
        let (sx, sy) = slip[s.step];
        let y_box = config.y_c_for(stances[s.step]);
        set.push_two_sided(&s.x_c.coeffs, s.x_c.constant, config.x_c, ConstraintTag::MechX, s.index);
        set.push_two_sided(&s.y_c.coeffs, s.y_c.constant, y_box, ConstraintTag::MechY, s.index);
        set.push_two_sided(
            &s.x_c.coeffs,
            s.x_c.constant,
            Interval::new(-sx, sx),
            ConstraintTag::SlipX,
            s.index,
        );
        set.push_two_sided(
            &s.y_c.coeffs,
            s.y_c.constant,
            Interval::new(-sy, sy),
            ConstraintTag::SlipY,
            s.index,
        );
    }
    Ok(set)
}

/// Boxes on every placement. Placement `j` is taken from the foot opposite
/// to `stances[j]`.
pub fn build_input_constraints(
    config: &WorkspaceConfig,
    stances: &[StanceSide],
) -> Result<LinearInequalitySet, ConstraintError> {
    config.validate()?;
    let n_vars = 2 * stances.len();
    let mut set = LinearInequalitySet::new(n_vars);
    for (j, stance) in stances.iter().enumerate() {
        let mut ex = vec![0.0; n_vars];
        ex[2 * j] = 1.0;
        let mut ey = vec![0.0; n_vars];
        ey[2 * j + 1] = 1.0;
        set.push_two_sided(&ex, 0.0, config.u_x, ConstraintTag::InputX, j);
        set.push_two_sided(&ey, 0.0, config.u_y_for(stance.flipped()), ConstraintTag::InputY, j);
    }
    Ok(set)
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), ConstraintError> {
    if expected == got {
        Ok(())
    } else {
        Err(ConstraintError::LengthMismatch { what, expected, got })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn slip_bound_examples() {
        assert_relative_eq!(slip_bound(0.0, 0.6, 0.8, 1.0).unwrap(), 0.48, epsilon = 1e-15);
        assert_relative_eq!(slip_bound(0.0, 0.2, 0.8, 1.0).unwrap(), 0.16, epsilon = 1e-15);
        let k = 5f64.to_radians().tan();
        let b = slip_bound(k, 0.6, 0.8, std::f64::consts::FRAC_1_SQRT_2).unwrap();
        assert_relative_eq!(b, 0.267374, epsilon = 1e-6);
    }

    #[test]
    fn slip_bound_is_tight_on_the_cone() {
        // |F + k| <= mu'(1 - k F) holds with equality at the returned bound
        for &(k, mu) in &[(0.0875, 0.6), (-0.2, 0.5), (0.3, 0.9)] {
            let mu_eff = mu * std::f64::consts::FRAC_1_SQRT_2;
            let x = slip_bound(k, mu, 0.8, std::f64::consts::FRAC_1_SQRT_2).unwrap();
            let f = x / (k * x + 0.8);
            let lhs = (f + k).abs();
            let rhs = -mu_eff * k * f + mu_eff;
            assert!((lhs - rhs).abs() < 1e-14, "k={k}");
        }
    }

    #[test]
    fn slip_bound_errors() {
        assert!(matches!(
            slip_bound(0.5, 0.6, 0.8, std::f64::consts::FRAC_1_SQRT_2),
            Err(ConstraintError::SlopeExceedsFriction { .. })
        ));
        assert!(slip_bound(0.0, 0.6, 0.8, 0.0).is_err());
        assert!(slip_bound(0.0, 0.6, 0.8, 1.1).is_err());
    }

    #[test]
    fn grf_ratio_examples() {
        let flat = TerrainPlane::flat(0.6, 0.8);
        assert_eq!(grf_ratios(0.0, 0.0, &flat).unwrap(), (0.0, 0.0));
        assert_eq!(grf_ratios(0.2, -0.1, &flat).unwrap(), (0.2 / 0.8, -0.1 / 0.8));
        let sloped = TerrainPlane {
            k_x: 0.2,
            k_y: 0.1,
            mu: 0.6,
            z_h: 0.8,
        };
        let (fx, fy) = grf_ratios(0.2, 0.1, &sloped).unwrap();
        assert_relative_eq!(fx, 0.2 / 0.85, epsilon = 1e-15);
        assert_relative_eq!(fy, 0.1 / 0.85, epsilon = 1e-15);
        let steep = TerrainPlane { k_x: 1.0, ..sloped };
        assert!(grf_ratios(-0.9, 0.0, &steep).is_err());
    }

    fn single_sample_geometry() -> HorizonGeometry {
        HorizonGeometry {
            n_vars: 2,
            n_steps: 1,
            samples: vec![SampleAffine {
                index: 1,
                step: 0,
                x_c: AffineRow {
                    coeffs: vec![-1.0, 0.0],
                    constant: 0.1,
                },
                y_c: AffineRow {
                    coeffs: vec![0.0, -1.0],
                    constant: -0.05,
                },
            }],
        }
    }

    #[test]
    fn one_sample_gives_eight_rows() {
        let set = build_state_constraints(
            &WorkspaceConfig::default(),
            &[TerrainPlane::default()],
            &[StanceSide::Left],
            &single_sample_geometry(),
        )
        .unwrap();
        assert_eq!(set.len(), 8);
        let tags: Vec<_> = set.rows.iter().map(|r| r.tag).collect();
        for tag in [
            ConstraintTag::MechX,
            ConstraintTag::MechY,
            ConstraintTag::SlipX,
            ConstraintTag::SlipY,
        ] {
            assert_eq!(tags.iter().filter(|t| **t == tag).count(), 2);
        }
    }

    #[test]
    fn slip_rows_carry_the_bound() {
        let ws = WorkspaceConfig {
            mu_safety_factor: 1.0,
            ..Default::default()
        };
        let set = build_state_constraints(
            &ws,
            &[TerrainPlane::flat(0.2, 0.8)],
            &[StanceSide::Left],
            &single_sample_geometry(),
        )
        .unwrap();
        // x_c = 0.1 - u_x; at u = 0 the slack of each slip-x row is 0.16 -/+ 0.1
        let slacks: Vec<f64> = set
            .rows
            .iter()
            .filter(|r| r.tag == ConstraintTag::SlipX)
            .map(|r| r.slack(&[0.0, 0.0]))
            .collect();
        assert_relative_eq!(slacks[0], 0.16 - 0.1, epsilon = 1e-15);
        assert_relative_eq!(slacks[1], 0.16 + 0.1, epsilon = 1e-15);
    }

    #[test]
    fn stance_selects_lateral_box() {
        let ws = WorkspaceConfig::default();
        assert_eq!(ws.y_c_for(StanceSide::Left), Interval::new(-0.35, -0.04));
        assert_eq!(ws.y_c_for(StanceSide::Right), Interval::new(0.04, 0.35));
        let geom = single_sample_geometry();
        let left = build_state_constraints(&ws, &[TerrainPlane::default()], &[StanceSide::Left], &geom).unwrap();
        let right = build_state_constraints(&ws, &[TerrainPlane::default()], &[StanceSide::Right], &geom).unwrap();
        let mech_y = |s: &LinearInequalitySet| -> Vec<f64> {
            s.rows.iter().filter(|r| r.tag == ConstraintTag::MechY).map(|r| r.upper).collect()
        };
        // y_c = -0.05 - u_y; upper row: -0.35..-0.04 shifted by the constant
        assert_relative_eq!(mech_y(&left)[0], -0.04 + 0.05, epsilon = 1e-15);
        assert_relative_eq!(mech_y(&right)[0], 0.35 + 0.05, epsilon = 1e-15);
    }

    #[test]
    fn input_rows() {
        let ws = WorkspaceConfig {
            u_x: Interval::new(-0.5, 0.5),
            ..Default::default()
        };
        let stances = [StanceSide::Right, StanceSide::Left, StanceSide::Right, StanceSide::Left];
        let set = build_input_constraints(&ws, &stances).unwrap();
        assert_eq!(set.len(), 16);
        assert_eq!(set.n_vars, 8);
        let first: Vec<_> = set.rows.iter().take(2).map(|r| (r.coeffs[0], r.upper)).collect();
        assert_eq!(first, vec![(1.0, 0.5), (-1.0, 0.5)]);
        // step 0 lands the right foot, so it is placed from the left foot
        let uy0 = &set.rows[2];
        assert_eq!(uy0.tag, ConstraintTag::InputY);
        assert_eq!(uy0.upper, -0.10);
        let uy1 = &set.rows[6];
        assert_eq!(uy1.upper, 0.45);
        assert_eq!(ws.u_y_for(StanceSide::Right), ws.u_y_for(StanceSide::Left).mirrored());
    }

    #[test]
    fn empty_interval_rejected() {
        let ws = WorkspaceConfig {
            u_x: Interval::new(0.3, 0.2),
            ..Default::default()
        };
        assert!(matches!(
            build_input_constraints(&ws, &[StanceSide::Left]),
            Err(ConstraintError::EmptyInterval { name: "u_x", .. })
        ));
    }

    #[test]
    fn length_mismatch_rejected() {
        let r = build_state_constraints(
            &WorkspaceConfig::default(),
            &[TerrainPlane::default(); 2],
            &[StanceSide::Left],
            &single_sample_geometry(),
        );
        assert!(matches!(r, Err(ConstraintError::LengthMismatch { .. })));
    }
}
