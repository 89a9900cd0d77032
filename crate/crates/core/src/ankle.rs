//! DCM tracking law and the split of a DCM error into the part the ankle
//! strategy can absorb (VRP shifts inside the support polygon) and the part
//! that needs a step adjustment.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::geometry::{ConvexPolygon, HalfPlane, Vec2, Vec3};
use crate::lip::{in_phase_coefficients, PhaseKind, PhasePlan};
use crate::qp::{solve_qp, QpProblem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FootGeometry {
    pub half_length: f64,
    pub half_width: f64,
}

impl Default for FootGeometry {
    /// 21 cm × 9 cm sole.
    fn default() -> Self {
        Self {
            half_length: 0.105,
            half_width: 0.045,
        }
    }
}

impl FootGeometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.half_length > 0.0 && self.half_width > 0.0) {
            return domain("foot half extents must be positive");
        }
        Ok(())
    }

    /// Sole rectangle centred on `center` (feet are not yawed).
    pub fn rect(&self, center: Vec2) -> ConvexPolygon {
        ConvexPolygon::centered_rect(center, self.half_length, self.half_width)
    }

    pub fn half_extents(&self) -> Vec2 {
        Vec2::new(self.half_length, self.half_width)
    }
}

/// Convex hull of the soles of all `feet`.
pub fn support_polygon(feet: &[Vec3], foot: &FootGeometry) -> ConvexPolygon {
    let pts: Vec<Vec2> = feet
        .iter()
        .flat_map(|p| foot.rect(p.xy()).vertices().to_vec())
        .collect();
    ConvexPolygon::hull(&pts)
}

/// `v = v_ref + (I + b K_ξ)(ξ − ξ_ref)` with diagonal `K_ξ`.
pub fn dcm_tracking_law(dcm: Vec3, dcm_ref: Vec3, vrp_ref: Vec3, k_xi: Vec3, b: f64) -> Result<Vec3> {
    if !(k_xi.x > 0.0 && k_xi.y > 0.0 && k_xi.z > 0.0) {
        return domain("DCM gains must be strictly positive");
    }
    let e = dcm - dcm_ref;
    Ok(vrp_ref
        + Vec3::new(
            (1.0 + b * k_xi.x) * e.x,
            (1.0 + b * k_xi.y) * e.y,
            (1.0 + b * k_xi.z) * e.z,
        ))
}

/// Projects the commanded VRP onto the support polygon, at height `Δz`.
pub fn clamp_vrp_to_support(v_cmd: Vec3, support: &ConvexPolygon, delta_z: f64) -> Vec3 {
    support.project(v_cmd.xy()).to_vec3(delta_z)
}

/// Half-plane description of the DCM errors the ankle strategy can absorb.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectableSet {
    /// Unit normals with offsets `n·e ≤ offset`.
    pub half_planes: Vec<HalfPlane>,
    pub horizon_phases: usize,
}

impl CorrectableSet {
    /// Minkowski sum `Σ s_k P_k` of polygons with non-negative scales. Its
    /// facets are normal to edges of the summands, and the offset along a
    /// normal is the sum of the scaled support values.
    pub fn minkowski(parts: &[(f64, &ConvexPolygon)], horizon_phases: usize) -> Self {
        let mut normals: Vec<Vec2> = Vec::new();
        for (_, poly) in parts {
            for hp in poly.half_planes() {
                let n = hp.normal * (1.0 / hp.normal.norm());
                if !normals.iter().any(|m| (*m - n).norm() < 1e-12) {
                    normals.push(n);
                }
            }
        }
        let half_planes = normals
            .into_iter()
            .map(|n| HalfPlane {
                normal: n,
                offset: parts
                    .iter()
                    .filter(|(s, _)| *s != 0.0)
                    .map(|(s, poly)| s * poly.support(n))
                    .sum(),
            })
            .collect();
        Self {
            half_planes,
            horizon_phases,
        }
    }

    pub fn contains(&self, e: Vec2) -> bool {
        self.half_planes.iter().all(|h| h.contains(e, 0.0))
    }

    pub fn contains_tol(&self, e: Vec2, tol: f64) -> bool {
        self.half_planes.iter().all(|h| h.contains(e, tol))
    }

    /// Euclidean projection, solved as a two-variable QP.
    pub fn project(&self, e: Vec2) -> Vec2 {
        if self.contains(e) {
            return e;
        }
        let m = self.half_planes.len();
        let a = DMatrix::from_fn(m, 2, |i, j| {
            let n = self.half_planes[i].normal;
            if j == 0 {
                n.x
            } else {
                n.y
            }
        });
        let upper = DVector::from_fn(m, |i, _| self.half_planes[i].offset);
        let lower = DVector::from_element(m, f64::NEG_INFINITY);
        let p = QpProblem::new(DMatrix::identity(2, 2), DVector::from_column_slice(&[-e.x, -e.y]))
            .with_inequalities(a, lower, upper);
        let sol = solve_qp(&p);
        if sol.is_optimal() {
            Vec2::new(sol.values[0], sol.values[1])
        } else {
            // Only reachable for a numerically empty set; the origin is always a member.
            Vec2::default()
        }
    }
}

/// Scaled VRP-adjustment sets over the first `phases_ahead` phases of the
/// plan, evaluated `t` seconds into the first phase. The DCM error allowed
/// at the end of the preview is zero.
pub fn correctable_set(
    plan: &PhasePlan,
    foot: &FootGeometry,
    t: f64,
    phases_ahead: usize,
    b: f64,
) -> Result<CorrectableSet> {
    let depth = phases_ahead.min(plan.n_phases());
    if depth == 0 {
        return domain("correctable set needs at least one preview phase");
    }
    let mut weights = vec![0.0; depth + 1];
    let mut carry = 1.0;
    for k in 0..depth {
        let c = if k == 0 {
            in_phase_coefficients(t, plan.phases[0].duration, b)?
        } else {
            in_phase_coefficients(0.0, plan.phases[k].duration, b)?
        };
        weights[k] += carry * c.alpha;
        weights[k + 1] += carry * c.beta;
        carry *= c.gamma;
    }
    let sets: Vec<ConvexPolygon> = (0..=depth).map(|i| adjustment_set(plan, foot, i)).collect();
    let parts: Vec<(f64, &ConvexPolygon)> = weights.iter().copied().zip(sets.iter()).collect();
    Ok(CorrectableSet::minkowski(&parts, depth))
}

/// Admissible VRP offsets around waypoint `i`: the sole rectangle, or mid
/// double support the hull of both soles relative to the carried VRP.
fn adjustment_set(plan: &PhasePlan, foot: &FootGeometry, i: usize) -> ConvexPolygon {
    match (i, plan.entry_vrp, plan.parity) {
        (0, Some(v), PhaseKind::DoubleSupport) if plan.foot_positions.len() >= 2 => {
            support_polygon(&plan.foot_positions[..2], foot).translated(Vec2::default() - v.xy())
        }
        _ => foot.rect(Vec2::default()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSplit {
    pub ankle: Vec3,
    pub step: Vec3,
}

impl ErrorSplit {
    pub fn needs_step(&self) -> bool {
        self.step != Vec3::ZERO
    }
}

/// Ankle part is the projection of the horizontal error onto the set; the
/// vertical component stays with the ankle.
pub fn split_error(error: Vec3, set: &CorrectableSet) -> ErrorSplit {
    let e = error.xy();
    if set.contains(e) {
        return ErrorSplit {
            ankle: error,
            step: Vec3::ZERO,
        };
    }
    let a = set.project(e);
    ErrorSplit {
        ankle: Vec3::new(a.x, a.y, error.z),
        step: Vec3::new(e.x - a.x, e.y - a.y, 0.0),
    }
}
