//! EKF belief propagation with an optional Gaussian prior over the viewpoint
//! from which a landmark is observed.

use crate::error::{Error, Result};
use crate::gaussian::{symmetrize, sym_inv, Gaussian, Matrix, Vector};

/// Pose belief `N(μ, Σ)`.
pub type Belief = Gaussian;

pub trait MotionModel {
    fn f(&self, x: &Vector, u: &Vector) -> Vector;
    /// `∂f/∂x`.
    fn jacobian(&self, x: &Vector, u: &Vector) -> Matrix;
    /// Process noise `R`, which may depend on the control.
    fn noise(&self, x: &Vector, u: &Vector) -> Matrix;
}

pub trait ObservationModel {
    fn h(&self, x: &Vector) -> Vector;
    /// `∂h/∂x`.
    fn jacobian(&self, x: &Vector) -> Matrix;
    /// Measurement noise `Q`.
    fn noise(&self) -> Matrix;
    /// `z - ẑ`; override for angular measurements.
    fn innovation(&self, z: &Vector, zhat: &Vector) -> Vector {
        z - zhat
    }
}

/// Gaussian over the viewpoint that best observes a landmark.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectPrior {
    pub mean: Vector,
    pub cov: Matrix,
}

fn central_diff(g: impl Fn(&Vector) -> Vector, x: &Vector, h: f64) -> Matrix {
    let m = g(x).len();
    let mut out = Matrix::zeros(m, x.len());
    for j in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        out.set_column(j, &((g(&xp) - g(&xm)) / (2.0 * h)));
    }
    out
}

/// Largest absolute difference between the analytic motion Jacobian and
/// central differences at `(x, u)`.
pub fn motion_jacobian_error(m: &dyn MotionModel, x: &Vector, u: &Vector) -> f64 {
    let fd = central_diff(|p| m.f(p, u), x, 1e-6);
    (m.jacobian(x, u) - fd).amax()
}

pub fn observation_jacobian_error(o: &dyn ObservationModel, x: &Vector) -> f64 {
    let fd = central_diff(|p| o.h(p), x, 1e-6);
    (o.jacobian(x) - fd).amax()
}

/// `μ̄ = f(μ, u)`, `Σ̄ = F Σ Fᵀ + R`.
pub fn predict(b: &Belief, u: &Vector, m: &dyn MotionModel) -> Result<Belief> {
    let f = m.jacobian(&b.mean, u);
    if f.ncols() != b.dim() {
        return Err(Error::Dimension { expected: b.dim(), got: f.ncols() });
    }
    let cov = &f * &b.cov * f.transpose() + m.noise(&b.mean, u);
    Ok(Gaussian { mean: m.f(&b.mean, u), cov: symmetrize(&cov) })
}

fn check_measurement(z: &Vector, om: &dyn ObservationModel, bpred: &Belief) -> Result<(Matrix, Matrix)> {
    let h = om.jacobian(&bpred.mean);
    let q = om.noise();
    if h.nrows() != z.len() || q.nrows() != z.len() {
        return Err(Error::Dimension { expected: h.nrows(), got: z.len() });
    }
    if h.ncols() != bpred.dim() {
        return Err(Error::Dimension { expected: bpred.dim(), got: h.ncols() });
    }
    Ok((h, q))
}

/// Standard EKF update with a Joseph-form covariance.
pub fn update_standard(bpred: &Belief, z: &Vector, om: &dyn ObservationModel) -> Result<Belief> {
    let (h, q) = check_measurement(z, om, bpred)?;
    let s = &h * &bpred.cov * h.transpose() + &q;
    let s = symmetrize(&s);
    let ph = &bpred.cov * h.transpose();
    // K = P Hᵀ S⁻¹, solved as S Kᵀ = H P
    let k = match s.clone().cholesky() {
        Some(c) => c.solve(&ph.transpose()).transpose(),
        None => ph * sym_inv(&s)?,
    };
    let r = om.innovation(z, &om.h(&bpred.mean));
    let n = bpred.dim();
    let a = Matrix::identity(n, n) - &k * &h;
    let cov = &a * &bpred.cov * a.transpose() + &k * &q * k.transpose();
    Ok(Gaussian { mean: &bpred.mean + &k * r, cov: symmetrize(&cov) })
}

fn check_prior(bpred: &Belief, op: &ObjectPrior) -> Result<Matrix> {
    if op.mean.len() != bpred.dim() || op.cov.nrows() != bpred.dim() {
        return Err(Error::Dimension { expected: bpred.dim(), got: op.mean.len() });
    }
    sym_inv(&op.cov)
}

/// `Σ̄ (Σ̄ + Σ_O)⁻¹ Σ_O`.
fn combined_prior_cov(bpred: &Belief, op: &ObjectPrior) -> Result<Matrix> {
    let sum_inv = sym_inv(&symmetrize(&(&bpred.cov + &op.cov)))?;
    Ok(symmetrize(&(&bpred.cov * sum_inv * &op.cov)))
}

/// Gain computed from the posterior covariance and the equivalent form that
/// only needs the predicted quantities.
pub fn kalman_gain_forms(bpred: &Belief, om: &dyn ObservationModel, op: &ObjectPrior) -> Result<(Matrix, Matrix)> {
    let h = om.jacobian(&bpred.mean);
    let q_inv = sym_inv(&om.noise())?;
    let cov = information_covariance(bpred, om, op)?;
    let direct = &cov * h.transpose() * q_inv;
    Ok((direct, reduced_gain(bpred, om, op)?))
}

fn reduced_gain(bpred: &Belief, om: &dyn ObservationModel, op: &ObjectPrior) -> Result<Matrix> {
    let h = om.jacobian(&bpred.mean);
    let sc = combined_prior_cov(bpred, op)?;
    let a = &h * &sc * h.transpose() + om.noise();
    Ok(&sc * h.transpose() * sym_inv(&symmetrize(&a))?)
}

/// `(Hᵀ Q⁻¹ H + Σ_O⁻¹ + Σ̄⁻¹)⁻¹`.
pub fn information_covariance(bpred: &Belief, om: &dyn ObservationModel, op: &ObjectPrior) -> Result<Matrix> {
    let so_inv = check_prior(bpred, op)?;
    let h = om.jacobian(&bpred.mean);
    let q_inv = sym_inv(&om.noise())?;
    let info = h.transpose() * q_inv * &h + so_inv + sym_inv(&bpred.cov)?;
    Ok(symmetrize(&sym_inv(&symmetrize(&info))?))
}

/// `(I - K H) Σ̄ (Σ̄ + Σ_O)⁻¹ Σ_O` with the reduced gain.
pub fn factored_covariance(bpred: &Belief, om: &dyn ObservationModel, op: &ObjectPrior) -> Result<Matrix> {
    check_prior(bpred, op)?;
    let h = om.jacobian(&bpred.mean);
    let k = reduced_gain(bpred, om, op)?;
    let n = bpred.dim();
    Ok(symmetrize(&((Matrix::identity(n, n) - k * h) * combined_prior_cov(bpred, op)?)))
}

/// Update that also conditions on the viewpoint prior. When `Σ̄` is singular
/// the factored covariance is used, which does not need `Σ̄⁻¹`.
pub fn update_with_object(
    bpred: &Belief,
    z: &Vector,
    om: &dyn ObservationModel,
    op: &ObjectPrior,
) -> Result<Belief> {
    let (h, q) = check_measurement(z, om, bpred)?;
    let so_inv = check_prior(bpred, op)?;
    let cov = match information_covariance(bpred, om, op) {
        Ok(c) => c,
        Err(Error::Singular(_)) | Err(Error::NotPsd(_)) => factored_covariance(bpred, om, op)?,
        Err(e) => return Err(e),
    };
    let k = &cov * h.transpose() * sym_inv(&q)?;
    let r = om.innovation(z, &om.h(&bpred.mean));
    let mean = &bpred.mean + k * r + &cov * so_inv * (&op.mean - &bpred.mean);
    Ok(Gaussian { mean, cov })
}

/// [`update_with_object`] when a prior is given, [`update_standard`] otherwise.
pub fn update(bpred: &Belief, z: &Vector, om: &dyn ObservationModel, op: Option<&ObjectPrior>) -> Result<Belief> {
    match op {
        Some(op) => update_with_object(bpred, z, om, op),
        None => update_standard(bpred, z, om),
    }
}

/// Quadratic cost whose minimizer is the posterior mean, with `h` linearized
/// at the predicted mean.
pub fn objective(x: &Vector, bpred: &Belief, z: &Vector, om: &dyn ObservationModel, op: Option<&ObjectPrior>) -> Result<f64> {
    let h = om.jacobian(&bpred.mean);
    let dx = x - &bpred.mean;
    let res = om.innovation(z, &om.h(&bpred.mean)) - &h * &dx;
    let mut j = 0.5 * (res.transpose() * sym_inv(&om.noise())? * &res)[(0, 0)];
    if let Some(op) = op {
        let d = x - &op.mean;
        j += 0.5 * (d.transpose() * sym_inv(&op.cov)? * &d)[(0, 0)];
    }
    j += 0.5 * (dx.transpose() * sym_inv(&bpred.cov)? * &dx)[(0, 0)];
    Ok(j)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Linear {
        h: Matrix,
        q: Matrix,
    }

    impl ObservationModel for Linear {
        fn h(&self, x: &Vector) -> Vector {
            &self.h * x
        }
        fn jacobian(&self, _: &Vector) -> Matrix {
            self.h.clone()
        }
        fn noise(&self) -> Matrix {
            self.q.clone()
        }
    }

    struct Shift {
        r: Matrix,
    }

    impl MotionModel for Shift {
        fn f(&self, x: &Vector, u: &Vector) -> Vector {
            x + u
        }
        fn jacobian(&self, x: &Vector, _: &Vector) -> Matrix {
            Matrix::identity(x.len(), x.len())
        }
        fn noise(&self, _: &Vector, _: &Vector) -> Matrix {
            self.r.clone()
        }
    }

    fn v(x: &[f64]) -> Vector {
        Vector::from_vec(x.to_vec())
    }

    fn m(n: usize, x: &[f64]) -> Matrix {
        Matrix::from_row_slice(n, n, x)
    }

    #[test]
    fn predict_identity_and_shift() {
        let b = Gaussian::new(v(&[1.0, 2.0]), m(2, &[0.3, 0.1, 0.1, 0.2])).unwrap();
        let zero = Shift { r: Matrix::zeros(2, 2) };
        assert_eq!(predict(&b, &v(&[0.0, 0.0]), &zero).unwrap(), b);
        let r = m(2, &[0.01, 0.0, 0.0, 0.02]);
        let p = predict(&b, &v(&[0.5, -1.0]), &Shift { r: r.clone() }).unwrap();
        assert_eq!(p.mean, v(&[1.5, 1.0]));
        assert!((p.cov - (&b.cov + r)).amax() < 1e-15);
    }

    #[test]
    fn standard_update_zero_innovation_and_blind_sensor() {
        let b = Gaussian::new(v(&[1.0, 2.0]), m(2, &[0.3, 0.1, 0.1, 0.2])).unwrap();
        let om = Linear { h: m(2, &[1.0, 0.0, 0.0, 1.0]), q: m(2, &[0.1, 0.0, 0.0, 0.1]) };
        let post = update_standard(&b, &om.h(&b.mean), &om).unwrap();
        assert!((post.mean - &b.mean).amax() < 1e-15);
        let blind = Linear { h: Matrix::zeros(2, 2), q: om.q.clone() };
        let post = update_standard(&b, &v(&[5.0, 5.0]), &blind).unwrap();
        assert!((post.mean - &b.mean).amax() < 1e-15);
        assert!((post.cov - &b.cov).amax() < 1e-15);
    }

    #[test]
    fn scalar_object_update_by_hand() {
        // info = 1 + 1/4 + 1 = 9/4, Σ = 4/9, K = 4/9,
        // μ = 0 + 4/9 · 1 + 4/9 · (1/4) · 2 = 2/3
        let b = Gaussian::new(v(&[0.0]), m(1, &[1.0])).unwrap();
        let om = Linear { h: m(1, &[1.0]), q: m(1, &[1.0]) };
        let op = ObjectPrior { mean: v(&[2.0]), cov: m(1, &[4.0]) };
        let post = update_with_object(&b, &v(&[1.0]), &om, &op).unwrap();
        assert!((post.cov[(0, 0)] - 4.0 / 9.0).abs() < 1e-15);
        assert!((post.mean[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn singular_prediction_uses_factored_form() {
        let b = Gaussian::new(v(&[0.0, 0.0]), m(2, &[1.0, 0.0, 0.0, 0.0])).unwrap();
        let om = Linear { h: m(2, &[1.0, 0.0, 0.0, 1.0]), q: Matrix::identity(2, 2) };
        let op = ObjectPrior { mean: v(&[0.0, 0.0]), cov: Matrix::identity(2, 2) };
        let post = update_with_object(&b, &v(&[0.5, 0.5]), &om, &op).unwrap();
        assert!(post.cov[(1, 1)].abs() < 1e-15);
        assert!(post.mean[1].abs() < 1e-15);
    }

    #[test]
    fn rejects_mismatched_measurement() {
        let b = Gaussian::new(v(&[0.0, 0.0]), Matrix::identity(2, 2)).unwrap();
        let om = Linear { h: m(2, &[1.0, 0.0, 0.0, 1.0]), q: Matrix::identity(2, 2) };
        assert!(update_standard(&b, &v(&[1.0]), &om).is_err());
    }

    #[test]
    fn jacobian_checks() {
        let om = Linear { h: m(2, &[1.0, 2.0, 3.0, 4.0]), q: Matrix::identity(2, 2) };
        assert!(observation_jacobian_error(&om, &v(&[0.3, -0.2])) < 1e-8);
        let mm = Shift { r: Matrix::zeros(2, 2) };
        assert!(motion_jacobian_error(&mm, &v(&[0.3, -0.2]), &v(&[1.0, 1.0])) < 1e-8);
    }
}
