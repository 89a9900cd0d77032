//! Independent oracles shared by integration tests.
#![allow(dead_code)]

use dcmstep::geometry::Vec3;
use nalgebra::{DMatrix, DVector};
use num_bigint::{BigInt, Sign};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Fixed-point number with `PREC` fractional bits.
#[derive(Clone, Debug)]
pub struct Fixed(BigInt);

const PREC: u32 = 320;

impl Fixed {
    pub fn from_f64(v: f64) -> Self {
        assert!(v.is_finite());
        if v == 0.0 {
            return Fixed(BigInt::from(0));
        }
        let bits = v.abs().to_bits();
        let exp = ((bits >> 52) & 0x7ff) as i64;
        let frac = bits & ((1u64 << 52) - 1);
        let (mant, e) = if exp == 0 {
            (frac, -1074)
        } else {
            (frac | (1u64 << 52), exp - 1075)
        };
        let mut m = BigInt::from(mant);
        let shift = e + PREC as i64;
        if shift >= 0 {
            m <<= shift as usize;
        } else {
            m >>= (-shift) as usize;
        }
        if v < 0.0 {
            m = -m;
        }
        Fixed(m)
    }

    pub fn one() -> Self {
        Fixed(BigInt::from(1) << PREC as usize)
    }

    pub fn add(&self, o: &Fixed) -> Fixed {
        Fixed(&self.0 + &o.0)
    }

    pub fn sub(&self, o: &Fixed) -> Fixed {
        Fixed(&self.0 - &o.0)
    }

    pub fn mul(&self, o: &Fixed) -> Fixed {
        Fixed((&self.0 * &o.0) >> PREC as usize)
    }

    pub fn div(&self, o: &Fixed) -> Fixed {
        Fixed((&self.0 << PREC as usize) / &o.0)
    }

    fn div_int(&self, k: u64) -> Fixed {
        Fixed(&self.0 / BigInt::from(k))
    }

    /// `e^x` by Taylor series after halving the argument below 1/2.
    pub fn exp(&self) -> Fixed {
        if self.0.sign() == Sign::Minus {
            let pos = Fixed(-self.0.clone()).exp();
            return Fixed::one().div(&pos);
        }
        let mut halvings = 0usize;
        let mut x = self.clone();
        let half = Fixed::one().div_int(2);
        while x.0 > half.0 {
            x = x.div_int(2);
            halvings += 1;
        }
        let mut sum = Fixed::one();
        let mut term = Fixed::one();
        for k in 1..200u64 {
            term = term.mul(&x).div_int(k);
            if term.0 == BigInt::from(0) {
                break;
            }
            sum = sum.add(&term);
        }
        for _ in 0..halvings {
            sum = sum.mul(&sum);
        }
        sum
    }

    pub fn to_f64(&self) -> f64 {
        let (sign, mag) = (self.0.sign(), self.0.magnitude());
        let bits = mag.bits() as i64;
        if bits == 0 {
            return 0.0;
        }
        let shift = bits - 64;
        let top = if shift > 0 { mag >> shift as usize } else { mag << (-shift) as usize };
        let digits = top.to_u64_digits();
        let v = digits.first().copied().unwrap_or(0) as f64 * 2f64.powi((shift - PREC as i64) as i32);
        if sign == Sign::Minus {
            -v
        } else {
            v
        }
    }
}

/// End-of-phase coefficients `(α, β, γ)` evaluated in fixed point.
pub fn big_end_of_phase(t: f64, b: f64) -> (f64, f64, f64) {
    let tf = Fixed::from_f64(t);
    let bf = Fixed::from_f64(b);
    let one = Fixed::one();
    let gamma = tf.div(&bf).exp();
    let b_over_t = bf.div(&tf);
    // β = 1 + b/T − γ b/T ; α = −b/T − γ (1 − b/T)
    let beta = one.add(&b_over_t).sub(&gamma.mul(&b_over_t));
    let alpha = Fixed(-b_over_t.0.clone()).sub(&gamma.mul(&one.sub(&b_over_t)));
    (alpha.to_f64(), beta.to_f64(), gamma.to_f64())
}

/// RK4 on `ξ̇ = (ξ − v(t))/b` with `v` linear from `v0` (t=0) to `vt`
/// (t=horizon), integrated from `t0` to `t1` in either direction.
#[allow(clippy::too_many_arguments)]
pub fn rk4_dcm(xi0: Vec3, v0: Vec3, vt: Vec3, horizon: f64, t0: f64, t1: f64, dt: f64, b: f64) -> Vec3 {
    let v = |t: f64| v0 * (1.0 - t / horizon) + vt * (t / horizon);
    let f = |t: f64, xi: Vec3| (xi - v(t)) / b;
    let n = ((t1 - t0).abs() / dt).round().max(1.0) as usize;
    let h = (t1 - t0) / n as f64;
    let mut xi = xi0;
    let mut t = t0;
    for _ in 0..n {
        let k1 = f(t, xi);
        let k2 = f(t + h / 2.0, xi + k1 * (h / 2.0));
        let k3 = f(t + h / 2.0, xi + k2 * (h / 2.0));
        let k4 = f(t + h, xi + k3 * h);
        xi += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        t += h;
    }
    xi
}

/// Random feasible QP in the solver's format.
pub struct RandomQp {
    pub h: DMatrix<f64>,
    pub c: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

pub fn random_qp(seed: u64) -> RandomQp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=20usize);
    let m = rng.random_range(0..=40usize);
    let m_eq = rng.random_range(0..=(n / 3).min(4));
    let mut u = || rng.random_range(-1.0..1.0);
    let r = DMatrix::from_fn(n, n, |_, _| u());
    let h = r.transpose() * &r / n as f64 + DMatrix::identity(n, n) * 0.2;
    let c = DVector::from_fn(n, |_, _| 2.0 * u());
    let x_feas = DVector::from_fn(n, |_, _| 0.5 * u());
    let a_eq = DMatrix::from_fn(m_eq, n, |_, _| u());
    let b_eq = &a_eq * &x_feas;
    let a_in = DMatrix::from_fn(m, n, |_, _| u());
    let ax = &a_in * &x_feas;
    let mut lower = DVector::zeros(m);
    let mut upper = DVector::zeros(m);
    for i in 0..m {
        let kind = (u() + 1.0) * 1.5;
        let (lo, up) = (ax[i] - 0.3 * (u() + 1.0), ax[i] + 0.3 * (u() + 1.0));
        if kind < 1.0 {
            lower[i] = lo;
            upper[i] = f64::INFINITY;
        } else if kind < 2.0 {
            lower[i] = f64::NEG_INFINITY;
            upper[i] = up;
        } else {
            lower[i] = lo;
            upper[i] = up;
        }
    }
    RandomQp { h, c, a_eq, b_eq, a_in, lower, upper }
}

/// Accelerated projected gradient ascent on the Lagrangian dual of a
/// strictly convex QP. Returns the primal point recovered from the dual.
pub fn dual_projected_gradient(q: &RandomQp, tol: f64, max_iter: usize) -> DVector<f64> {
    let n = q.c.len();
    // Stack rows as Aᵢ x ≥ bᵢ (inequalities, projected onto ≥ 0) and equality rows (free).
    let mut rows: Vec<DVector<f64>> = Vec::new();
    let mut rhs = Vec::new();
    let mut signed = Vec::new();
    for i in 0..q.a_in.nrows() {
        let a = q.a_in.row(i).transpose();
        if q.lower[i].is_finite() {
            rows.push(a.clone());
            rhs.push(q.lower[i]);
            signed.push(true);
        }
        if q.upper[i].is_finite() {
            rows.push(-a);
            rhs.push(-q.upper[i]);
            signed.push(true);
        }
    }
    for i in 0..q.a_eq.nrows() {
        rows.push(q.a_eq.row(i).transpose());
        rhs.push(q.b_eq[i]);
        signed.push(false);
    }
    let m = rows.len();
    let hinv = q.h.clone().cholesky().expect("positive definite").inverse();
    if m == 0 {
        return -(&hinv * &q.c);
    }
    let a = DMatrix::from_fn(m, n, |i, j| rows[i][j]);
    let b = DVector::from_vec(rhs);
    let mm = &a * &hinv * a.transpose();
    let lip = mm.clone().symmetric_eigen().eigenvalues.max().max(1e-12);
    let step = 1.0 / lip;
    // dual gradient at u: b − A x(u), x(u) = H⁻¹(Aᵀu − c)
    let q0 = &b + &a * (&hinv * &q.c);
    let project = |v: &mut DVector<f64>| {
        for i in 0..m {
            if signed[i] && v[i] < 0.0 {
                v[i] = 0.0;
            }
        }
    };
    let mut lam = DVector::zeros(m);
    let mut yk = lam.clone();
    let mut tk: f64 = 1.0;
    let primal = |lam: &DVector<f64>| &hinv * (a.transpose() * lam - &q.c);
    let dual_value = |lam: &DVector<f64>| -0.5 * lam.dot(&(&mm * lam)) + q0.dot(lam) - 0.5 * q.c.dot(&(&hinv * &q.c));
    for it in 0..max_iter {
        let grad = &q0 - &mm * &yk;
        let mut next = &yk + grad * step;
        project(&mut next);
        // gradient-mapping restart
        if (&yk - &next).dot(&(&next - &lam)) > 0.0 {
            tk = 1.0;
            yk = next.clone();
            lam = next;
        } else {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * tk * tk).sqrt());
            yk = &next + (&next - &lam) * ((tk - 1.0) / t_next);
            tk = t_next;
            lam = next;
        }
        if it % 50 == 0 {
            let x = primal(&lam);
            let viol = (0..m)
                .map(|i| {
                    let s = a.row(i).dot(&x.transpose()) - b[i];
                    if signed[i] { (-s).max(0.0) } else { s.abs() }
                })
                .fold(0.0, f64::max);
            let primal_obj = 0.5 * x.dot(&(&q.h * &x)) + q.c.dot(&x);
            if viol < tol && (primal_obj - dual_value(&lam)).abs() < tol {
                return x;
            }
        }
    }
    primal(&lam)
}

/// Projected gradient for `min ½xᵀHx + cᵀx` over a box with PSD `H`.
pub fn box_projected_gradient(h: &DMatrix<f64>, c: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>, iters: usize) -> DVector<f64> {
    let lip = h.clone().symmetric_eigen().eigenvalues.max().max(1e-12);
    let mut x = DVector::from_fn(c.len(), |i, _| 0.5 * (lo[i] + hi[i]));
    for _ in 0..iters {
        let g = h * &x + c;
        x -= g / lip;
        for i in 0..x.len() {
            x[i] = x[i].clamp(lo[i], hi[i]);
        }
    }
    x
}

pub fn qp_from_random(q: &RandomQp) -> dcmstep::qp::QpProblem {
    dcmstep::qp::QpProblem::new(q.h.clone(), q.c.clone())
        .with_equalities(q.a_eq.clone(), q.b_eq.clone())
        .with_inequalities(q.a_in.clone(), q.lower.clone(), q.upper.clone())
}
