//! Kalman covariance recursion in information form and the mutual
//! information it induces.
//!
//! Planning only ever needs covariances: in a linear-Gaussian model the
//! posterior covariance does not depend on the measured values, so the
//! information gathered by a set of trajectories is a deterministic function
//! of where the sensors are.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;

/// Linear target dynamics `y_{t+1} = A_t y_t + w_t`, `w_t ~ N(0, W_t)`.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetModel {
    Constant {
        transition: Mat,
        noise: Mat,
    },
    /// Entry `t` holds `(A_t, W_t)`; the last entry is reused past the end.
    PerStep(Vec<(Mat, Mat)>),
}

impl TargetModel {
    pub fn constant(transition: Mat, noise: Mat) -> Result<Self> {
        check_square(&transition, "transition")?;
        check_square(&noise, "process noise")?;
        if transition.nrows() != noise.nrows() {
            return Err(Error::Dimension(format!(
                "transition is {}x{} but process noise is {}x{}",
                transition.nrows(),
                transition.ncols(),
                noise.nrows(),
                noise.ncols()
            )));
        }
        Ok(TargetModel::Constant { transition, noise })
    }

    pub fn dim(&self) -> usize {
        match self {
            TargetModel::Constant { transition, .. } => transition.nrows(),
            TargetModel::PerStep(steps) => steps.first().map_or(0, |(a, _)| a.nrows()),
        }
    }

    pub fn at(&self, t: usize) -> (&Mat, &Mat) {
        match self {
            TargetModel::Constant { transition, noise } => (transition, noise),
            TargetModel::PerStep(steps) => {
                let (a, w) = &steps[t.min(steps.len() - 1)];
                (a, w)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeliefCov {
    pub sigma: Mat,
    pub t: usize,
}

impl BeliefCov {
    pub fn new(sigma: Mat) -> Self {
        BeliefCov { sigma, t: 0 }
    }
}

/// Sensor information `Hᵀ V⁻¹ H`. The zero matrix means the target was not
/// observed.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoMatrix(pub Mat);

impl InfoMatrix {
    pub fn zeros(dim: usize) -> Self {
        InfoMatrix(Mat::zeros(dim, dim))
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }
}

fn check_square(m: &Mat, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn check_same(a: &Mat, b: &Mat, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// `(Σ + Σᵀ) / 2`, in place.
pub fn symmetrize(m: &mut Mat) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn max_asymmetry(m: &Mat) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

fn cholesky(m: &Mat, what: &'static str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone()).ok_or(Error::NotPositiveDefinite(what))
}

fn chol_logdet(ch: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Log-determinant of an SPD matrix through its Cholesky factor.
pub fn logdet(sigma: &Mat) -> Result<f64> {
    check_square(sigma, "logdet input")?;
    Ok(chol_logdet(&cholesky(sigma, "logdet input")?))
}

/// `A_t Σ A_tᵀ + W_t`, symmetrized.
pub fn kf_predict(sigma: &Mat, model: &TargetModel, t: usize) -> Result<Mat> {
    let (a, w) = model.at(t);
    check_square(sigma, "covariance")?;
    if a.ncols() != sigma.nrows() {
        return Err(Error::Dimension(format!(
            "transition is {}x{}, covariance is {}x{}",
            a.nrows(),
            a.ncols(),
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    let mut out = a * sigma * a.transpose() + w;
    symmetrize(&mut out);
    Ok(out)
}

/// Joint measurement update in information form, `(Σ⁻¹ + Σ_i M_i)⁻¹`.
///
/// All sensors are fused through one inversion so the result does not depend
/// on the order of `infos`.
pub fn kf_update_info(sigma: &Mat, infos: &[InfoMatrix]) -> Result<Mat> {
    check_square(sigma, "covariance")?;
    for info in infos {
        check_same(sigma, &info.0, "information matrix vs covariance")?;
    }
    if infos.is_empty() {
        return Ok(sigma.clone());
    }
    let mut total = cholesky(sigma, "prior covariance")?.inverse();
    for info in infos {
        total += &info.0;
    }
    symmetrize(&mut total);
    let mut out = cholesky(&total, "accumulated information")?.inverse();
    symmetrize(&mut out);
    Ok(out)
}

/// One predict/update cycle used by the planning oracle.
///
/// Returns the posterior covariance together with
/// `logdet(predicted) - logdet(posterior)`, which is exactly zero when no
/// information arrives.
pub fn info_step(predicted: Mat, info: Option<&Mat>) -> Result<(Mat, f64)> {
    let Some(info) = info else {
        return Ok((predicted, 0.0));
    };
    let pred_ch = cholesky(&predicted, "predicted covariance")?;
    let mut total = pred_ch.inverse() + info;
    symmetrize(&mut total);
    let post_ch = cholesky(&total, "accumulated information")?;
    // logdet(posterior) = -logdet(Σ_p⁻¹ + M)
    let gain = chol_logdet(&pred_ch) + chol_logdet(&post_ch);
    let mut post = post_ch.inverse();
    symmetrize(&mut post);
    Ok((post, gain))
}

/// Mutual information between the target trajectory `y_{1:T}` and the
/// measurements whose information matrices `infos(t)` returns for
/// `t = 1..=horizon`.
///
/// Implements `½ Σ_t [logdet ρ^p(Σ_{t-1}) − logdet Σ_t]` on the covariance
/// recursion only.
pub fn mutual_information<F>(model: &TargetModel, prior: &BeliefCov, horizon: usize, mut infos: F) -> Result<f64>
where
    F: FnMut(usize) -> Vec<InfoMatrix>,
{
    let mut sigma = prior.sigma.clone();
    let mut total = 0.0;
    for t in 1..=horizon {
        let predicted = kf_predict(&sigma, model, prior.t + t - 1)?;
        let step = infos(t);
        let mut sum: Option<Mat> = None;
        for info in &step {
            check_same(&predicted, &info.0, "information matrix vs covariance")?;
            if info.is_zero() {
                continue;
            }
            match sum.as_mut() {
                Some(s) => *s += &info.0,
                None => sum = Some(info.0.clone()),
            }
        }
        let (post, gain) = info_step(predicted, sum.as_ref())?;
        total += 0.5 * gain;
        sigma = post;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar(v: f64) -> Mat {
        Mat::from_element(1, 1, v)
    }

    #[test]
    fn predict_scalar_identity_dynamics() {
        let model = TargetModel::constant(scalar(1.0), scalar(1.0)).unwrap();
        let out = kf_predict(&scalar(1.0), &model, 0).unwrap();
        assert_eq!(out[(0, 0)], 2.0);
    }

    #[test]
    fn predict_noiseless_identity_is_identity() {
        let s0 = Mat::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let model = TargetModel::constant(Mat::identity(2, 2), Mat::zeros(2, 2)).unwrap();
        assert_eq!(kf_predict(&s0, &model, 3).unwrap(), s0);
    }

    #[test]
    fn predict_rejects_dimension_mismatch() {
        let model = TargetModel::constant(Mat::identity(2, 2), Mat::zeros(2, 2)).unwrap();
        assert!(matches!(
            kf_predict(&Mat::identity(3, 3), &model, 0),
            Err(Error::Dimension(_))
        ));
        assert!(TargetModel::constant(Mat::identity(2, 2), Mat::zeros(3, 3)).is_err());
    }

    #[test]
    fn update_without_measurements_is_identity() {
        let s = scalar(1.0);
        assert_eq!(kf_update_info(&s, &[]).unwrap(), s);
    }

    #[test]
    fn update_scalar_closed_form() {
        let out = kf_update_info(&scalar(2.0), &[InfoMatrix(scalar(1.0))]).unwrap();
        assert_relative_eq!(out[(0, 0)], 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn logdet_small_cases() {
        assert_eq!(logdet(&Mat::identity(3, 3)).unwrap(), 0.0);
        let d = Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 3.0]));
        assert_relative_eq!(logdet(&d).unwrap(), 6.0f64.ln(), max_relative = 1e-12);
        let bad = Mat::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(logdet(&bad), Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn scalar_mutual_information() {
        let model = TargetModel::constant(scalar(1.0), scalar(1.0)).unwrap();
        let prior = BeliefCov::new(scalar(1.0));
        let mi = mutual_information(&model, &prior, 1, |_| vec![InfoMatrix(scalar(1.0))]).unwrap();
        assert!((mi - 0.5 * 3.0f64.ln()).abs() < 1e-12);
        let none = mutual_information(&model, &prior, 5, |_| vec![]).unwrap();
        assert_eq!(none, 0.0);
    }

    #[test]
    fn info_step_without_information_is_exact() {
        let p = Mat::from_row_slice(2, 2, &[2.0, 0.1, 0.1, 1.0]);
        let (post, gain) = info_step(p.clone(), None).unwrap();
        assert_eq!(post, p);
        assert_eq!(gain, 0.0);
    }
}
