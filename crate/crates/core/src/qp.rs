//! Dense convex QP solver.
//!
//! Solves `min ½xᵀHx + cᵀx + k` subject to `A_eq x = b_eq` and
//! `lower ≤ A_in x ≤ upper`. Equalities are eliminated by Gauss–Jordan
//! reduction with complete pivoting (`x = x₀ + Z y`); the reduced problem is
//! solved by a dual active-set method in the style of Goldfarb and Idnani,
//! which starts from the unconstrained minimum and adds violated constraints
//! one at a time. Positive semidefinite reduced Hessians are handled by a
//! proximal-point outer loop.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimingVariable {
    /// `γ = e^{T/b}` of the current single-support phase.
    Gamma,
    /// Remaining duration `T` of the current double-support phase.
    Duration,
}

/// Which slots of the decision vector hold which quantities: the timing
/// variable (if any), then `(x, y)` per free foot, then `(x, y)` per free DCM
/// waypoint, then `n_other` unnamed slots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableLayout {
    pub timing: Option<TimingVariable>,
    pub n_feet: usize,
    pub n_waypoints: usize,
    pub n_other: usize,
}

impl VariableLayout {
    pub fn plain(n: usize) -> Self {
        Self {
            timing: None,
            n_feet: 0,
            n_waypoints: 0,
            n_other: n,
        }
    }

    pub fn dim(&self) -> usize {
        self.timing.is_some() as usize + 2 * self.n_feet + 2 * self.n_waypoints + self.n_other
    }

    pub fn timing_index(&self) -> Option<usize> {
        self.timing.map(|_| 0)
    }

    pub fn foot_index(&self, j: usize) -> usize {
        debug_assert!(j < self.n_feet);
        self.timing.is_some() as usize + 2 * j
    }

    pub fn waypoint_index(&self, k: usize) -> usize {
        debug_assert!(k < self.n_waypoints);
        self.timing.is_some() as usize + 2 * self.n_feet + 2 * k
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub linear_cost: DVector<f64>,
    /// Constant added to the objective so the nominal point can score zero.
    pub constant: f64,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub layout: VariableLayout,
}

impl QpProblem {
    pub fn new(hessian: DMatrix<f64>, linear_cost: DVector<f64>) -> Self {
        let n = linear_cost.len();
        Self {
            hessian,
            linear_cost,
            constant: 0.0,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, n),
            lower: DVector::zeros(0),
            upper: DVector::zeros(0),
            layout: VariableLayout::plain(n),
        }
    }

    pub fn with_equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_eq = a;
        self.b_eq = b;
        self
    }

    pub fn with_inequalities(mut self, a: DMatrix<f64>, lower: DVector<f64>, upper: DVector<f64>) -> Self {
        self.a_in = a;
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn dim(&self) -> usize {
        self.linear_cost.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if self.hessian.shape() != (n, n) {
            return domain(format!("hessian is {:?}, expected {n}x{n}", self.hessian.shape()));
        }
        if self.a_eq.ncols() != n || self.a_eq.nrows() != self.b_eq.len() {
            return domain("equality block has inconsistent dimensions");
        }
        let m = self.a_in.nrows();
        if self.a_in.ncols() != n || self.lower.len() != m || self.upper.len() != m {
            return domain("inequality block has inconsistent dimensions");
        }
        if self.layout.dim() != n {
            return domain("variable layout does not match problem dimension");
        }
        for i in 0..m {
            if self.lower[i] > self.upper[i] {
                return domain(format!("inequality row {i} has lower > upper"));
            }
        }
        let asym = (&self.hessian - self.hessian.transpose()).amax();
        if asym > 1e-12 * (1.0 + self.hessian.amax()) {
            return domain("hessian is not symmetric");
        }
        Ok(())
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.linear_cost.dot(x) + self.constant
    }

    /// Largest violation over all equality and inequality rows.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let mut v: f64 = 0.0;
        if self.a_eq.nrows() > 0 {
            v = v.max((&self.a_eq * x - &self.b_eq).amax());
        }
        if self.a_in.nrows() > 0 {
            let ax = &self.a_in * x;
            for i in 0..ax.len() {
                v = v.max(self.lower[i] - ax[i]).max(ax[i] - self.upper[i]);
            }
        }
        v
    }

    /// Diagnostic dump of every matrix as nested arrays.
    pub fn to_json(&self) -> serde_json::Value {
        fn mat(m: &DMatrix<f64>) -> serde_json::Value {
            (0..m.nrows())
                .map(|i| m.row(i).iter().copied().map(finite_or_null).collect::<Vec<_>>())
                .collect::<Vec<_>>()
                .into()
        }
        fn vec(v: &DVector<f64>) -> serde_json::Value {
            v.iter().copied().map(finite_or_null).collect::<Vec<_>>().into()
        }
        serde_json::json!({
            "layout": self.layout,
            "hessian": mat(&self.hessian),
            "linear_cost": vec(&self.linear_cost),
            "constant": self.constant,
            "a_eq": mat(&self.a_eq),
            "b_eq": vec(&self.b_eq),
            "a_in": mat(&self.a_in),
            "lower": vec(&self.lower),
            "upper": vec(&self.upper),
        })
    }
}

fn finite_or_null(v: f64) -> serde_json::Value {
    if v.is_finite() {
        v.into()
    } else {
        serde_json::Value::Null
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QpSolution {
    pub values: DVector<f64>,
    pub status: QpStatus,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub eq_multipliers: DVector<f64>,
    /// Signed multiplier per inequality row: positive when the lower side is
    /// active, negative when the upper side is.
    pub in_multipliers: DVector<f64>,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub max_iter: usize,
    pub feasibility_tol: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            max_iter: 200,
            feasibility_tol: 1e-9,
        }
    }
}

pub fn solve_qp(problem: &QpProblem) -> QpSolution {
    solve_qp_with(problem, &QpSettings::default())
}

/// One side of an inequality row in `n·x ≥ d` form.
#[derive(Debug, Clone, Copy)]
struct Side {
    row: usize,
    sign: f64,
    rhs: f64,
}

pub fn solve_qp_with(problem: &QpProblem, settings: &QpSettings) -> QpSolution {
    let n = problem.dim();
    let m_in = problem.a_in.nrows();

    // Rows with lower == upper join the equalities.
    let mut eq_in_rows = Vec::new();
    let mut sides = Vec::new();
    for i in 0..m_in {
        let (lo, up) = (problem.lower[i], problem.upper[i]);
        if lo == up {
            eq_in_rows.push(i);
            continue;
        }
        if lo.is_finite() {
            sides.push(Side { row: i, sign: 1.0, rhs: lo });
        }
        if up.is_finite() {
            sides.push(Side { row: i, sign: -1.0, rhs: -up });
        }
    }
    let m_eq = problem.a_eq.nrows() + eq_in_rows.len();
    let mut e = DMatrix::zeros(m_eq, n);
    let mut e_rhs = DVector::zeros(m_eq);
    for i in 0..problem.a_eq.nrows() {
        e.row_mut(i).copy_from(&problem.a_eq.row(i));
        e_rhs[i] = problem.b_eq[i];
    }
    for (k, &i) in eq_in_rows.iter().enumerate() {
        let r = problem.a_eq.nrows() + k;
        e.row_mut(r).copy_from(&problem.a_in.row(i));
        e_rhs[r] = problem.lower[i];
    }

    let infeasible = |iterations| QpSolution {
        values: DVector::from_element(n, f64::NAN),
        status: QpStatus::Infeasible,
        objective: f64::NAN,
        kkt_residual: f64::INFINITY,
        iterations,
        eq_multipliers: DVector::from_element(problem.a_eq.nrows(), f64::NAN),
        in_multipliers: DVector::from_element(m_in, f64::NAN),
    };

    let Some(elim) = eliminate_equalities(&e, &e_rhs) else {
        return infeasible(0);
    };
    let k = elim.z.ncols();

    // Reduced problem over y: ½yᵀGy + aᵀy, Cr y ≥ dr.
    let hz = &problem.hessian * &elim.z;
    let mut g = elim.z.transpose() * &hz;
    g = (&g + g.transpose()) * 0.5;
    let a = elim.z.transpose() * (&problem.hessian * &elim.x0 + &problem.linear_cost);
    let ms = sides.len();
    let mut cr = DMatrix::zeros(ms, k);
    let mut dr = DVector::zeros(ms);
    for (s, side) in sides.iter().enumerate() {
        let row = problem.a_in.row(side.row) * side.sign;
        let row_z = &row * &elim.z;
        cr.row_mut(s).copy_from(&row_z);
        dr[s] = side.rhs - row.dot(&elim.x0.transpose());
    }

    let outcome = if k == 0 {
        // Fully determined by the equalities.
        let feasible = (0..ms).all(|s| dr[s] <= settings.feasibility_tol * (1.0 + dr[s].abs()));
        if feasible {
            Ok((DVector::zeros(0), DVector::zeros(ms), 0))
        } else {
            Err(DualFailure::Infeasible(0))
        }
    } else {
        solve_reduced(&g, &a, &cr, &dr, settings)
    };

    let (y, u, iterations) = match outcome {
        Ok(v) => v,
        Err(DualFailure::Infeasible(it)) => return infeasible(it),
        Err(DualFailure::MaxIter(y, u, it)) => {
            let x = &elim.x0 + &elim.z * &y;
            return finish(problem, &sides, &eq_in_rows, &e, x, u, it, QpStatus::MaxIter);
        }
    };
    let x = &elim.x0 + &elim.z * &y;
    finish(problem, &sides, &eq_in_rows, &e, x, u, iterations, QpStatus::Optimal)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    problem: &QpProblem,
    sides: &[Side],
    eq_in_rows: &[usize],
    e: &DMatrix<f64>,
    x: DVector<f64>,
    u: DVector<f64>,
    iterations: usize,
    status: QpStatus,
) -> QpSolution {
    let m_in = problem.a_in.nrows();
    let mut in_mult = DVector::zeros(m_in);
    for (s, side) in sides.iter().enumerate() {
        in_mult[side.row] += side.sign * u[s];
    }
    // Stationarity: Hx + c − A_inᵀ λ_in = Eᵀ λ_eq.
    let grad = &problem.hessian * &x + &problem.linear_cost;
    let mut resid = grad.clone();
    if m_in > 0 {
        resid -= problem.a_in.transpose() * &in_mult;
    }
    let lambda = least_squares_multipliers(e, &resid);
    let n_eq = problem.a_eq.nrows();
    for (k, &i) in eq_in_rows.iter().enumerate() {
        in_mult[i] = lambda[n_eq + k];
    }
    let eq_mult = lambda.rows(0, n_eq).into_owned();
    if e.nrows() > 0 {
        resid -= e.transpose() * &lambda;
    }

    let scale = 1.0 + grad.amax() + problem.linear_cost.amax();
    let mut kkt = resid.amax() / scale;
    if problem.a_eq.nrows() > 0 {
        let r = &problem.a_eq * &x - &problem.b_eq;
        kkt = kkt.max(r.amax() / (1.0 + problem.b_eq.amax()));
    }
    if m_in > 0 {
        let ax = &problem.a_in * &x;
        for i in 0..m_in {
            let (lo, up) = (problem.lower[i], problem.upper[i]);
            let viol = (lo - ax[i]).max(ax[i] - up).max(0.0);
            let bound_scale = 1.0 + finite_abs(lo).max(finite_abs(up));
            kkt = kkt.max(viol / bound_scale);
            // complementarity on the side the multiplier acts on
            let slack = if in_mult[i] > 0.0 {
                ax[i] - lo
            } else if in_mult[i] < 0.0 {
                up - ax[i]
            } else {
                0.0
            };
            if slack.is_finite() {
                kkt = kkt.max((in_mult[i] * slack).abs() / (scale * bound_scale));
            }
        }
    }
    QpSolution {
        objective: problem.objective(&x),
        values: x,
        status,
        kkt_residual: kkt,
        iterations,
        eq_multipliers: eq_mult,
        in_multipliers: in_mult,
    }
}

fn finite_abs(v: f64) -> f64 {
    if v.is_finite() {
        v.abs()
    } else {
        0.0
    }
}

/// `argmin ‖Eᵀλ − r‖`.
fn least_squares_multipliers(e: &DMatrix<f64>, r: &DVector<f64>) -> DVector<f64> {
    let m = e.nrows();
    if m == 0 {
        return DVector::zeros(0);
    }
    let normal = e * e.transpose();
    let rhs = e * r;
    if let Some(ch) = normal.clone().cholesky() {
        return ch.solve(&rhs);
    }
    let svd = e.transpose().svd(true, true);
    svd.solve(r, 1e-12).unwrap_or_else(|_| DVector::zeros(m))
}

struct Elimination {
    x0: DVector<f64>,
    z: DMatrix<f64>,
}

/// Parameterizes `{x : E x = e}` as `x₀ + Z y`. Returns `None` when the
/// system is inconsistent.
fn eliminate_equalities(e: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<Elimination> {
    let (m, n) = e.shape();
    if m == 0 {
        return Some(Elimination {
            x0: DVector::zeros(n),
            z: DMatrix::identity(n, n),
        });
    }
    let mut w = e.clone();
    let mut r = rhs.clone();
    let scale = w.amax().max(1e-300);
    let tol = 1e-12 * scale * (m.max(n) as f64);
    let mut pivot_cols: Vec<usize> = Vec::with_capacity(m);
    let mut is_pivot = vec![false; n];
    let mut rank = 0;
    while rank < m {
        let mut best = (0.0, 0, 0);
        for i in rank..m {
            for j in 0..n {
                if !is_pivot[j] && w[(i, j)].abs() > best.0 {
                    best = (w[(i, j)].abs(), i, j);
                }
            }
        }
        let (mag, pi, pj) = best;
        if mag <= tol {
            break;
        }
        w.swap_rows(rank, pi);
        r.swap_rows(rank, pi);
        let piv = w[(rank, pj)];
        for j in 0..n {
            w[(rank, j)] /= piv;
        }
        r[rank] /= piv;
        for i in 0..m {
            if i == rank {
                continue;
            }
            let f = w[(i, pj)];
            if f != 0.0 {
                for j in 0..n {
                    w[(i, j)] -= f * w[(rank, j)];
                }
                r[i] -= f * r[rank];
            }
        }
        is_pivot[pj] = true;
        pivot_cols.push(pj);
        rank += 1;
    }
    let rhs_scale = 1.0 + rhs.amax();
    for i in rank..m {
        if r[i].abs() > 1e-9 * rhs_scale {
            return None;
        }
    }
    let free: Vec<usize> = (0..n).filter(|&j| !is_pivot[j]).collect();
    let mut x0 = DVector::zeros(n);
    for (k, &pc) in pivot_cols.iter().enumerate() {
        x0[pc] = r[k];
    }
    let mut z = DMatrix::zeros(n, free.len());
    for (c, &f) in free.iter().enumerate() {
        z[(f, c)] = 1.0;
        for (k, &pc) in pivot_cols.iter().enumerate() {
            z[(pc, c)] = -w[(k, f)];
        }
    }
    Some(Elimination { x0, z })
}

enum DualFailure {
    Infeasible(usize),
    MaxIter(DVector<f64>, DVector<f64>, usize),
}

type Reduced = (DVector<f64>, DVector<f64>, usize);

fn solve_reduced(
    g: &DMatrix<f64>,
    a: &DVector<f64>,
    cr: &DMatrix<f64>,
    dr: &DVector<f64>,
    settings: &QpSettings,
) -> Result<Reduced, DualFailure> {
    let k = g.nrows();
    let gmax = (0..k).map(|i| g[(i, i)].abs()).fold(0.0, f64::max).max(1.0);
    if let Some(l) = cholesky_pd(g, 1e-10 * gmax) {
        return dual_active_set(&l, a, cr, dr, settings, settings.max_iter);
    }
    // Semidefinite: proximal point iterations on ½yᵀGy + aᵀy + ρ/2‖y − y_k‖².
    let rho = 1e-8 * gmax;
    let g_rho = g + DMatrix::identity(k, k) * rho;
    let Some(l) = cholesky_pd(&g_rho, 0.0) else {
        return Err(DualFailure::Infeasible(0));
    };
    let mut y = DVector::zeros(k);
    let mut total = 0;
    let mut u = DVector::zeros(cr.nrows());
    for _ in 0..100 {
        let a_k = a - &y * rho;
        let (y_next, u_next, it) = match dual_active_set(&l, &a_k, cr, dr, settings, settings.max_iter) {
            Ok(v) => v,
            Err(DualFailure::Infeasible(it)) => return Err(DualFailure::Infeasible(total + it)),
            Err(DualFailure::MaxIter(y, u, it)) => return Err(DualFailure::MaxIter(y, u, total + it)),
        };
        total += it;
        let step = (&y_next - &y).amax();
        y = y_next;
        u = u_next;
        // The subproblem optimum violates the original stationarity by ρ·step.
        if rho * step <= 1e-13 * (1.0 + a.amax()) {
            return Ok((y, u, total));
        }
    }
    Err(DualFailure::MaxIter(y, u, total))
}

fn cholesky_pd(g: &DMatrix<f64>, min_pivot: f64) -> Option<DMatrix<f64>> {
    let ch = g.clone().cholesky()?;
    let l = ch.l();
    let k = l.nrows();
    if (0..k).any(|i| l[(i, i)] * l[(i, i)] <= min_pivot) {
        return None;
    }
    Some(l)
}

fn dual_active_set(
    l: &DMatrix<f64>,
    a: &DVector<f64>,
    cr: &DMatrix<f64>,
    dr: &DVector<f64>,
    settings: &QpSettings,
    max_iter: usize,
) -> Result<Reduced, DualFailure> {
    let m = cr.nrows();
    // Unconstrained minimum: y = −G⁻¹a.
    let mut y = -solve_llt(l, a);
    let mut u = DVector::zeros(m);
    if m == 0 {
        return Ok((y, u, 0));
    }
    // Constraint normals in the whitened space: b_i = L⁻¹ n_i.
    let b = l
        .solve_lower_triangular(&cr.transpose())
        .expect("cholesky factor is nonsingular");
    let bnorm: Vec<f64> = (0..m).map(|i| b.column(i).norm().max(1e-300)).collect();
    let tol: Vec<f64> = (0..m).map(|i| settings.feasibility_tol * (1.0 + dr[i].abs())).collect();
    let mut active: Vec<usize> = Vec::new();
    let mut in_active = vec![false; m];
    let mut iterations = 0;

    loop {
        let slack = cr * &y - dr;
        let mut p = None;
        let mut worst = 0.0;
        for i in 0..m {
            if in_active[i] || slack[i] >= -tol[i] {
                continue;
            }
            let score = slack[i] / bnorm[i];
            if score < worst {
                worst = score;
                p = Some(i);
            }
        }
        let Some(p) = p else {
            return Ok((y, u, iterations));
        };
        let bp = b.column(p).into_owned();
        let mut s_p = slack[p];
        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(DualFailure::MaxIter(y, u, iterations));
            }
            let (r, w) = if active.is_empty() {
                (DVector::zeros(0), bp.clone())
            } else {
                let mut ba = DMatrix::zeros(b.nrows(), active.len());
                for (c, &j) in active.iter().enumerate() {
                    ba.column_mut(c).copy_from(&b.column(j));
                }
                let r = least_squares(&ba, &bp);
                let w = &bp - &ba * &r;
                (r, w)
            };
            let wn = w.norm_squared();
            let t2 = if wn > 1e-14 * bp.norm_squared() {
                -s_p / wn
            } else {
                f64::INFINITY
            };
            let mut t1 = f64::INFINITY;
            let mut drop_at = None;
            for (c, &j) in active.iter().enumerate() {
                if r[c] > 1e-14 {
                    let t = u[j] / r[c];
                    if t < t1 {
                        t1 = t;
                        drop_at = Some(c);
                    }
                }
            }
            if t1.is_infinite() && t2.is_infinite() {
                return Err(DualFailure::Infeasible(iterations));
            }
            let t = t1.min(t2);
            if t2.is_finite() {
                let z = l
                    .transpose()
                    .solve_upper_triangular(&w)
                    .expect("cholesky factor is nonsingular");
                y += &z * t;
                s_p += t * wn;
            }
            for (c, &j) in active.iter().enumerate() {
                u[j] = (u[j] - t * r[c]).max(0.0);
            }
            u[p] += t;
            if t2 <= t1 {
                active.push(p);
                in_active[p] = true;
                break;
            }
            let c = drop_at.expect("partial step has a blocking constraint");
            let j = active.remove(c);
            in_active[j] = false;
            u[j] = 0.0;
        }
    }
}

fn solve_llt(l: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let t = l.solve_lower_triangular(rhs).expect("cholesky factor is nonsingular");
    l.transpose()
        .solve_upper_triangular(&t)
        .expect("cholesky factor is nonsingular")
}

/// `argmin ‖A r − b‖` for `A` with full column rank.
fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let qr = a.clone().qr();
    let qtb = qr.q().transpose() * b;
    qr.r()
        .solve_upper_triangular(&qtb)
        .unwrap_or_else(|| DVector::zeros(a.ncols()))
}
