//! Cubature Kalman filter over fixed-size `nalgebra` vectors.
//!
//! Uses the third-degree spherical-radial rule: `2n` points
//! `x +/- sqrt(n) * S e_j` with `P = S S^T` and equal weights `1 / 2n`.
//! Points are redrawn from the predicted covariance before the measurement
//! update, so the filter reproduces the Kalman filter exactly on linear models.

use nalgebra::{SMatrix, SVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum CkfError {
    #[error("covariance is not positive definite ({0})")]
    CholeskyFailure(&'static str),
}

pub trait ProcessModel<const N: usize> {
    fn propagate(&self, x: &SVector<f64, N>) -> SVector<f64, N>;
    fn noise(&self) -> SMatrix<f64, N, N>;
}

/// Measurement function. `noise` is queried after every cubature point has
/// been observed, so a model may inflate its covariance based on what it saw.
pub trait MeasurementModel<const N: usize, const M: usize> {
    fn observe(&mut self, x: &SVector<f64, N>) -> SVector<f64, M>;
    fn noise(&self) -> SMatrix<f64, M, M>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct CubatureKalmanFilter<const N: usize> {
    pub x: SVector<f64, N>,
    pub p: SMatrix<f64, N, N>,
}

impl<const N: usize> CubatureKalmanFilter<N> {
    pub fn new(x: SVector<f64, N>, p: SMatrix<f64, N, N>) -> Self {
        Self { x, p }
    }

    /// Points `x + sqrt(n) S e_j` followed by their mirror images.
    pub fn cubature_points(&self) -> Result<Vec<SVector<f64, N>>, CkfError> {
        cubature_points(&self.x, &self.p)
    }

    pub fn predict<P: ProcessModel<N>>(&mut self, model: &P) -> Result<(), CkfError> {
        let propagated: Vec<_> = self.cubature_points()?.iter().map(|pt| model.propagate(pt)).collect();
        let mean = weighted_mean(&propagated);
        let mut cov = model.noise();
        for pt in &propagated {
            let d = pt - mean;
            cov += d * d.transpose() / propagated.len() as f64;
        }
        self.x = mean;
        self.p = symmetrize(&cov);
        Ok(())
    }

    /// Measurement update; returns the innovation `z - z_pred`.
    pub fn update<const M: usize, H: MeasurementModel<N, M>>(
        &mut self,
        z: &SVector<f64, M>,
        model: &mut H,
    ) -> Result<SVector<f64, M>, CkfError> {
        let points = self.cubature_points()?;
        let observed: Vec<SVector<f64, M>> = points.iter().map(|pt| model.observe(pt)).collect();
        let z_pred = weighted_mean(&observed);
        let w = 1.0 / points.len() as f64;

        let mut p_zz = model.noise();
        let mut p_xz = SMatrix::<f64, N, M>::zeros();
        for (pt, obs) in points.iter().zip(&observed) {
            let dz = obs - z_pred;
            p_zz += dz * dz.transpose() * w;
            p_xz += (pt - self.x) * dz.transpose() * w;
        }
        let p_zz = symmetrize(&p_zz);
        let chol = p_zz.cholesky().ok_or(CkfError::CholeskyFailure("innovation covariance"))?;
        // K = P_xz P_zz^-1, solved as P_zz K^T = P_xz^T
        let gain = chol.solve(&p_xz.transpose()).transpose();
        let innovation = z - z_pred;
        self.x += gain * innovation;
        self.p = symmetrize(&(self.p - gain * p_zz * gain.transpose()));
        Ok(innovation)
    }
}

pub fn cubature_points<const N: usize>(
    x: &SVector<f64, N>,
    p: &SMatrix<f64, N, N>,
) -> Result<Vec<SVector<f64, N>>, CkfError> {
    let s = p.cholesky().ok_or(CkfError::CholeskyFailure("state covariance"))?.l();
    let scale = (N as f64).sqrt();
    let mut points = Vec::with_capacity(2 * N);
    for j in 0..N {
        points.push(x + s.column(j) * scale);
    }
    for j in 0..N {
        points.push(x - s.column(j) * scale);
    }
    Ok(points)
}

fn weighted_mean<const D: usize>(points: &[SVector<f64, D>]) -> SVector<f64, D> {
    points.iter().sum::<SVector<f64, D>>() / points.len() as f64
}

pub fn symmetrize<const D: usize>(m: &SMatrix<f64, D, D>) -> SMatrix<f64, D, D> {
    (m + m.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix2, Vector2};

    struct Linear2 {
        f: Matrix2<f64>,
        q: Matrix2<f64>,
    }

    impl ProcessModel<2> for Linear2 {
        fn propagate(&self, x: &Vector2<f64>) -> Vector2<f64> {
            self.f * x
        }
        fn noise(&self) -> Matrix2<f64> {
            self.q
        }
    }

    struct Identity2(Matrix2<f64>);

    impl MeasurementModel<2, 2> for Identity2 {
        fn observe(&mut self, x: &Vector2<f64>) -> Vector2<f64> {
            *x
        }
        fn noise(&self) -> Matrix2<f64> {
            self.0
        }
    }

    #[test]
    fn points_are_symmetric_about_mean() {
        let x = Vector2::new(1.5, -0.25);
        let p = Matrix2::new(0.3, 0.1, 0.1, 0.2);
        let pts = cubature_points(&x, &p).unwrap();
        assert_eq!(pts.len(), 4);
        let sum: Vector2<f64> = pts.iter().sum();
        assert!((sum - x * 4.0).norm() < 1e-14);
        // sample covariance of the points reproduces P
        let cov = pts.iter().map(|pt| (pt - x) * (pt - x).transpose()).sum::<Matrix2<f64>>() / 4.0;
        assert!((cov - p).norm() < 1e-14);
    }

    #[test]
    fn indefinite_covariance_is_reported() {
        let mut f = CubatureKalmanFilter::new(Vector2::zeros(), Matrix2::new(1.0, 2.0, 2.0, 1.0));
        let model = Linear2 { f: Matrix2::identity(), q: Matrix2::zeros() };
        assert_eq!(f.predict(&model), Err(CkfError::CholeskyFailure("state covariance")));
    }

    #[test]
    fn scalar_update_matches_closed_form() {
        let mut f = CubatureKalmanFilter::new(Vector2::new(0.0, 0.0), Matrix2::identity() * 2.0);
        let mut h = Identity2(Matrix2::identity() * 2.0);
        f.update(&Vector2::new(1.0, -1.0), &mut h).unwrap();
        assert!((f.x - Vector2::new(0.5, -0.5)).norm() < 1e-14);
        assert!((f.p - Matrix2::identity()).norm() < 1e-14);
    }
}
