//! Assembly of the single- and double-support footstep/timing QPs.
//!
//! Decision variables (x, y only; the ground is flat): the timing variable of
//! the current phase (`γ = e^{T/b}` in single support, `T` in double
//! support), every previewed foot that has not touched down yet, and the DCM
//! waypoints after the current one. The first phase's end-of-phase relation
//! is linear in `γ` in single support and linearized in `T` in double
//! support; later phases use the exact recursion with fixed durations.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::geometry::{ConvexPolygon, HalfPlane, Vec2, Vec3};
use crate::lip::{end_of_phase_coefficients, PhaseCoefficients, PhaseKind, PhasePlan, Side};
use crate::qp::{QpProblem, TimingVariable, VariableLayout};

/// Sparse inequality row: `(column, coefficient)` pairs with lower and upper bounds.
type SparseRow = (Vec<(usize, f64)>, f64, f64);

/// Permissible landing region for one foot, relative to the foot it steps
/// from, and its rotation about that foot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRegion {
    /// Polygon in the frame of `stance_foot` (origin at the stance foot).
    pub polygon: ConvexPolygon,
    /// Rotation in `[−π/2, π/2]`; positive values swing the region towards
    /// +x from either side.
    pub theta: f64,
    pub stance_foot: Vec3,
    pub swing_side: Side,
}

impl StepRegion {
    /// Counter-clockwise world rotation implied by `theta` for this side.
    pub fn world_angle(&self) -> f64 {
        -self.theta * self.swing_side.sign()
    }

    /// Half-planes in the stance-foot frame after rotation. `θ = 0` returns
    /// the unrotated polygon's half-planes bit for bit.
    pub fn relative_half_planes(&self) -> Result<Vec<HalfPlane>> {
        if !(self.theta.abs() <= FRAC_PI_2) {
            return domain(format!("region rotation {} outside [-π/2, π/2]", self.theta));
        }
        if self.polygon.len() < 3 || !self.polygon.is_convex_ccw() {
            return domain("step region must be a convex counter-clockwise polygon");
        }
        if self.theta == 0.0 {
            return Ok(self.polygon.half_planes());
        }
        Ok(self
            .polygon
            .rotated_about(Vec2::default(), self.world_angle())
            .half_planes())
    }
}

/// World-frame half-planes of the rotated region.
pub fn rotate_region(region: &StepRegion) -> Result<Vec<HalfPlane>> {
    let anchor = region.stance_foot.xy();
    Ok(region
        .relative_half_planes()?
        .into_iter()
        .map(|h| HalfPlane {
            normal: h.normal,
            offset: h.offset + h.normal.dot(anchor),
        })
        .collect())
}

/// Bounds on the remaining duration of the current phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingBounds {
    pub t_min: f64,
    pub t_max: f64,
    /// Linearization point (double support) / nominal remaining time.
    pub t0: f64,
    /// Half-width of the double-support trust region around `t0`.
    pub trust_region: f64,
}

impl TimingBounds {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_min >= 0.0 && self.t_min <= self.t_max && self.t0 > 0.0 && self.trust_region >= 0.0) {
            return domain(format!("inconsistent timing bounds {self:?}"));
        }
        Ok(())
    }

    pub fn gamma_bounds(&self, b: f64) -> (f64, f64) {
        ((self.t_min / b).exp(), (self.t_max / b).exp())
    }

    /// Bounds on `T` in double support including the trust region.
    pub fn duration_bounds(&self) -> (f64, f64) {
        let lo = self.t_min.max(self.t0 - self.trust_region);
        let hi = self.t_max.min(self.t0 + self.trust_region);
        if lo > hi {
            (hi, hi)
        } else {
            (lo, hi)
        }
    }
}

/// Affine model `c + ℓ (T − T₀)` of the end-of-phase coefficients around `T₀`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DsLinearization {
    pub t0: f64,
    pub alpha_c: f64,
    pub alpha_l: f64,
    pub beta_c: f64,
    pub beta_l: f64,
    pub gamma_c: f64,
    pub gamma_l: f64,
}

impl DsLinearization {
    pub fn at(&self, t: f64) -> PhaseCoefficients {
        let d = t - self.t0;
        PhaseCoefficients {
            alpha: self.alpha_c + self.alpha_l * d,
            beta: self.beta_c + self.beta_l * d,
            gamma: self.gamma_c + self.gamma_l * d,
            at_time: t,
            horizon: t,
        }
    }
}

/// Values and `T`-derivatives of the end-of-phase coefficients at `T₀`.
///
/// With `u = T₀/b` and `E(u) = (e^u − 1)/u`: `γ = e^u`, `β = 1 − E(u)`,
/// `α = 1 − β − γ`; slopes `γ' = γ/b`, `β' = −E'(u)/b`, `α' = −β' − γ'`.
pub fn linearize_ds_coefficients(t0: f64, b: f64) -> Result<DsLinearization> {
    if !(t0 > 0.0) || !(b > 0.0) {
        return domain(format!("linearization needs T0 > 0 and b > 0 (T0={t0}, b={b})"));
    }
    let u = t0 / b;
    let gamma_c = u.exp();
    let e = u.exp_m1() / u;
    let de = if u < 1e-2 {
        // Σ k u^{k−1} / (k+1)!
        let mut sum = 0.0;
        let mut pow = 1.0;
        let mut fact = 2.0;
        for k in 1..12 {
            sum += k as f64 * pow / fact;
            pow *= u;
            fact *= (k + 2) as f64;
        }
        sum
    } else {
        (u * gamma_c - u.exp_m1()) / (u * u)
    };
    let beta_c = 1.0 - e;
    let gamma_l = gamma_c / b;
    let beta_l = -de / b;
    Ok(DsLinearization {
        t0,
        alpha_c: 1.0 - beta_c - gamma_c,
        alpha_l: -beta_l - gamma_l,
        beta_c,
        beta_l,
        gamma_c,
        gamma_l,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QpWeights {
    pub w_gamma: f64,
    pub w_t: f64,
    pub w_foot: [f64; 2],
    pub w_dcm: [f64; 2],
}

impl Default for QpWeights {
    fn default() -> Self {
        Self {
            w_gamma: 1.0,
            w_t: 1.0,
            w_foot: [10.0, 10.0],
            w_dcm: [100.0, 100.0],
        }
    }
}

impl QpWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.w_gamma, self.w_t, self.w_foot[0], self.w_foot[1], self.w_dcm[0], self.w_dcm[1]];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return domain("QP weights must be finite and non-negative");
        }
        Ok(())
    }
}

/// Targets the QP is pulled towards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NominalTargets {
    /// Nominal positions of the free feet, in preview order.
    pub feet: Vec<Vec3>,
    /// `γ_d` in single support, `T_d` in double support.
    pub timing: f64,
    pub terminal_dcm: Vec3,
}

#[derive(Clone, Copy)]
enum Term {
    Fixed(Vec2),
    Var(usize),
}

fn axis(v: Vec2, a: usize) -> f64 {
    if a == 0 {
        v.x
    } else {
        v.y
    }
}

struct Assembly {
    layout: VariableLayout,
    n_fixed: usize,
}

impl Assembly {
    fn vrp(&self, plan: &PhasePlan, i: usize) -> Term {
        if i == 0 {
            if let Some(v) = plan.entry_vrp {
                return Term::Fixed(v.xy());
            }
        }
        let j = plan.foot_index(i);
        if j < self.n_fixed {
            Term::Fixed(plan.foot_positions[j].xy())
        } else {
            Term::Var(self.layout.foot_index(j - self.n_fixed))
        }
    }

    fn xi(&self, xi1: Vec3, k: usize) -> Term {
        if k == 0 {
            Term::Fixed(xi1.xy())
        } else {
            Term::Var(self.layout.waypoint_index(k - 1))
        }
    }
}

/// Single-support QP: the first phase obeys `ξ₂ = (1 − γ) p₁ + γ ξ₁`.
#[allow(clippy::too_many_arguments)]
pub fn assemble_ss_qp(
    xi_1: Vec3,
    plan: &PhasePlan,
    regions: &[StepRegion],
    nominal: &NominalTargets,
    weights: &QpWeights,
    bounds: &TimingBounds,
    b: f64,
) -> Result<QpProblem> {
    assemble(PhaseKind::SingleSupport, xi_1, plan, regions, nominal, weights, bounds, b)
}

/// Double-support QP: the first phase uses the coefficients linearized at
/// `bounds.t0`, with `|T − T₀|` limited by the trust region.
#[allow(clippy::too_many_arguments)]
pub fn assemble_ds_qp(
    xi_1: Vec3,
    v_1: Vec3,
    plan: &PhasePlan,
    regions: &[StepRegion],
    nominal: &NominalTargets,
    weights: &QpWeights,
    bounds: &TimingBounds,
    b: f64,
) -> Result<QpProblem> {
    if plan.entry_vrp != Some(v_1) {
        return domain("double-support plan must carry v_1 as its entry VRP");
    }
    assemble(PhaseKind::DoubleSupport, xi_1, plan, regions, nominal, weights, bounds, b)
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    kind: PhaseKind,
    xi1: Vec3,
    plan: &PhasePlan,
    regions: &[StepRegion],
    nominal: &NominalTargets,
    weights: &QpWeights,
    bounds: &TimingBounds,
    b: f64,
) -> Result<QpProblem> {
    plan.validate_structure()?;
    bounds.validate()?;
    weights.validate()?;
    if plan.parity != kind {
        return domain(format!("plan starts in {} but a {} QP was requested", plan.parity.short(), kind.short()));
    }
    let n_fixed = match kind {
        PhaseKind::SingleSupport => 1,
        PhaseKind::DoubleSupport => 2,
    };
    if plan.foot_positions.len() <= n_fixed {
        return domain("preview has no free footsteps");
    }
    let n_var = plan.foot_positions.len() - n_fixed;
    if regions.len() != n_var || nominal.feet.len() != n_var {
        return domain(format!(
            "expected {n_var} regions and nominal feet, got {} and {}",
            regions.len(),
            nominal.feet.len()
        ));
    }
    let n_ph = plan.n_phases();
    let layout = VariableLayout {
        timing: Some(match kind {
            PhaseKind::SingleSupport => TimingVariable::Gamma,
            PhaseKind::DoubleSupport => TimingVariable::Duration,
        }),
        n_feet: n_var,
        n_waypoints: n_ph,
        n_other: 0,
    };
    let asm = Assembly { layout, n_fixed };
    let n = asm.layout.dim();
    let ti = 0;

    // Equalities: two rows (x, y) per phase.
    let mut a_eq = DMatrix::zeros(2 * n_ph, n);
    let mut b_eq = DVector::zeros(2 * n_ph);
    let lin = match kind {
        PhaseKind::DoubleSupport => Some(linearize_ds_coefficients(bounds.t0, b)?),
        PhaseKind::SingleSupport => None,
    };
    for k in 0..n_ph {
        let next = asm.layout.waypoint_index(k);
        let v0 = asm.vrp(plan, k);
        let v1 = asm.vrp(plan, k + 1);
        let xi_k = asm.xi(xi1, k);
        for a in 0..2 {
            let r = 2 * k + a;
            a_eq[(r, next + a)] = 1.0;
            if k == 0 {
                let (Term::Fixed(v0), Term::Fixed(v1), Term::Fixed(x1)) = (v0, v1, xi_k) else {
                    return domain("first-phase VRP waypoints must be fixed");
                };
                let (v0, v1, x1) = (axis(v0, a), axis(v1, a), axis(x1, a));
                match &lin {
                    None => {
                        // ξ₂ − γ (ξ₁ − p₁) = p₁
                        a_eq[(r, ti)] = -(x1 - v0);
                        b_eq[r] = v0;
                    }
                    Some(l) => {
                        let comb_c = l.alpha_c * v0 + l.beta_c * v1 + l.gamma_c * x1;
                        let comb_l = l.alpha_l * v0 + l.beta_l * v1 + l.gamma_l * x1;
                        a_eq[(r, ti)] = -comb_l;
                        b_eq[r] = comb_c - comb_l * l.t0;
                    }
                }
                continue;
            }
            let c = end_of_phase_coefficients(plan.phases[k].duration, b)?;
            let mut rhs = 0.0;
            for (term, coef) in [(v0, c.alpha), (v1, c.beta), (xi_k, c.gamma)] {
                match term {
                    Term::Fixed(p) => rhs += coef * axis(p, a),
                    Term::Var(idx) => a_eq[(r, idx + a)] -= coef,
                }
            }
            b_eq[r] = rhs;
        }
    }

    // Cost Σ w (x − x_d)² written as ½xᵀHx + cᵀx + const.
    let mut h = DMatrix::zeros(n, n);
    let mut c = DVector::zeros(n);
    let mut constant = 0.0;
    let mut add_sq = |idx: usize, w: f64, target: f64| {
        h[(idx, idx)] += 2.0 * w;
        c[idx] -= 2.0 * w * target;
        constant += w * target * target;
    };
    let w_time = match kind {
        PhaseKind::SingleSupport => weights.w_gamma,
        PhaseKind::DoubleSupport => weights.w_t,
    };
    add_sq(ti, w_time, nominal.timing);
    for (j, p) in nominal.feet.iter().enumerate() {
        let idx = asm.layout.foot_index(j);
        add_sq(idx, weights.w_foot[0], p.x);
        add_sq(idx + 1, weights.w_foot[1], p.y);
    }
    let last = asm.layout.waypoint_index(n_ph - 1);
    add_sq(last, weights.w_dcm[0], nominal.terminal_dcm.x);
    add_sq(last + 1, weights.w_dcm[1], nominal.terminal_dcm.y);

    // Inequalities: timing bounds, then region half-planes per free foot.
    let mut rows: Vec<SparseRow> = Vec::new();
    let (lo, hi) = match kind {
        PhaseKind::SingleSupport => bounds.gamma_bounds(b),
        PhaseKind::DoubleSupport => bounds.duration_bounds(),
    };
    rows.push((vec![(ti, 1.0)], lo, hi));
    for (j, region) in regions.iter().enumerate() {
        let idx = asm.layout.foot_index(j);
        let anchor = if j == 0 {
            Term::Fixed(plan.foot_positions[n_fixed - 1].xy())
        } else {
            Term::Var(asm.layout.foot_index(j - 1))
        };
        for hp in region.relative_half_planes()? {
            let mut coefs = vec![(idx, hp.normal.x), (idx + 1, hp.normal.y)];
            let mut upper = hp.offset;
            match anchor {
                Term::Fixed(p) => upper += hp.normal.dot(p),
                Term::Var(pi) => {
                    coefs.push((pi, -hp.normal.x));
                    coefs.push((pi + 1, -hp.normal.y));
                }
            }
            rows.push((coefs, f64::NEG_INFINITY, upper));
        }
    }
    let m = rows.len();
    let mut a_in = DMatrix::zeros(m, n);
    let mut lower = DVector::zeros(m);
    let mut upper = DVector::zeros(m);
    for (r, (coefs, lo, hi)) in rows.into_iter().enumerate() {
        for (idx, v) in coefs {
            a_in[(r, idx)] += v;
        }
        lower[r] = lo;
        upper[r] = hi;
    }

    let mut qp = QpProblem::new(h, c)
        .with_equalities(a_eq, b_eq)
        .with_inequalities(a_in, lower, upper);
    qp.constant = constant;
    qp.layout = asm.layout;
    Ok(qp)
}
