//! Constant-velocity Kalman filter over box states.
//!
//! State layout is `(cx, cy, a, h, vcx, vcy, va, vh)` where `a` is the aspect
//! ratio `w/h`. Measurement space is `(cx, cy, a, h)`. Process and measurement
//! noise scale with the box height, the usual convention for image-space
//! tracking-by-detection.

use nalgebra::{Cholesky, RealField, SMatrix, SVector};
use num_traits::FromPrimitive;

use crate::{Error, Result};

pub type StateVector<T> = SVector<T, 8>;
pub type StateCovariance<T> = SMatrix<T, 8, 8>;
pub type Measurement<T> = SVector<T, 4>;

/// 0.95 quantile of the chi-square distribution with 4 degrees of freedom,
/// the gate for measurement-to-track association.
pub const CHI2_INV95_4DOF: f64 = 9.4877;

/// Gaussian state estimate of one track.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState<T: RealField + Copy> {
    pub mean: StateVector<T>,
    pub covariance: StateCovariance<T>,
}

/// Filter parameters; one instance is shared by all tracks of a camera.
#[derive(Debug, Clone)]
pub struct KalmanFilter<T: RealField + Copy> {
    std_weight_position: T,
    std_weight_velocity: T,
}

impl<T: RealField + Copy + FromPrimitive> Default for KalmanFilter<T> {
    fn default() -> Self {
        KalmanFilter::new(
            T::from_f64(1.0 / 20.0).unwrap(),
            T::from_f64(1.0 / 160.0).unwrap(),
        )
    }
}

impl<T: RealField + Copy + FromPrimitive> KalmanFilter<T> {
    pub fn new(std_weight_position: T, std_weight_velocity: T) -> Self {
        KalmanFilter {
            std_weight_position,
            std_weight_velocity,
        }
    }

    fn c(v: f64) -> T {
        T::from_f64(v).unwrap()
    }

    /// Diagonal regularization added to every innovation covariance so that
    /// degenerate zero-noise states stay invertible.
    fn regularization() -> T {
        Self::c(1e-9)
    }

    fn motion_matrix() -> SMatrix<T, 8, 8> {
        let mut f = SMatrix::<T, 8, 8>::identity();
        for i in 0..4 {
            f[(i, i + 4)] = T::one();
        }
        f
    }

    /// Start a track from its first measurement: velocities zero, generous
    /// covariance scaled by the box height.
    pub fn initiate(&self, measurement: &Measurement<T>) -> KalmanState<T> {
        let mut mean = StateVector::<T>::zeros();
        for i in 0..4 {
            mean[i] = measurement[i];
        }
        let h = measurement[3];
        let two = Self::c(2.0);
        let ten = Self::c(10.0);
        let std = [
            two * self.std_weight_position * h,
            two * self.std_weight_position * h,
            Self::c(1e-2),
            two * self.std_weight_position * h,
            ten * self.std_weight_velocity * h,
            ten * self.std_weight_velocity * h,
            Self::c(1e-5),
            ten * self.std_weight_velocity * h,
        ];
        let mut covariance = StateCovariance::<T>::zeros();
        for (i, s) in std.iter().enumerate() {
            covariance[(i, i)] = *s * *s;
        }
        KalmanState { mean, covariance }
    }

    /// Advance one frame under constant velocity; covariance grows by the
    /// process noise.
    pub fn predict(&self, state: &KalmanState<T>) -> KalmanState<T> {
        let h = state.mean[3];
        let std = [
            self.std_weight_position * h,
            self.std_weight_position * h,
            Self::c(1e-2),
            self.std_weight_position * h,
            self.std_weight_velocity * h,
            self.std_weight_velocity * h,
            Self::c(1e-5),
            self.std_weight_velocity * h,
        ];
        let mut process_noise = StateCovariance::<T>::zeros();
        for (i, s) in std.iter().enumerate() {
            process_noise[(i, i)] = *s * *s;
        }
        let f = Self::motion_matrix();
        KalmanState {
            mean: f * state.mean,
            covariance: f * state.covariance * f.transpose() + process_noise,
        }
    }

    /// Project the state into measurement space: `(H x, H P H^T + R)`.
    pub fn project(&self, state: &KalmanState<T>) -> (Measurement<T>, SMatrix<T, 4, 4>) {
        let h = state.mean[3];
        let std = [
            self.std_weight_position * h,
            self.std_weight_position * h,
            Self::c(1e-1),
            self.std_weight_position * h,
        ];
        let mut projected_cov: SMatrix<T, 4, 4> =
            state.covariance.fixed_view::<4, 4>(0, 0).into_owned();
        for (i, s) in std.iter().enumerate() {
            projected_cov[(i, i)] += *s * *s + Self::regularization();
        }
        let projected_mean: Measurement<T> = state.mean.fixed_rows::<4>(0).into_owned();
        (projected_mean, projected_cov)
    }

    /// Standard correction step.
    pub fn update(&self, state: &KalmanState<T>, measurement: &Measurement<T>) -> Result<KalmanState<T>> {
        let (projected_mean, projected_cov) = self.project(state);
        let chol = Cholesky::new(projected_cov).ok_or_else(|| {
            Error::Numeric("innovation covariance is not positive definite".into())
        })?;
        // K = P H^T S^{-1}; with H selecting the first four components,
        // P H^T is the first four columns of P.
        let ph_t: SMatrix<T, 8, 4> = state.covariance.fixed_columns::<4>(0).into_owned();
        let gain: SMatrix<T, 8, 4> = chol.solve(&ph_t.transpose()).transpose();
        let innovation = measurement - projected_mean;
        let mut mean = state.mean + gain * innovation;
        // a box must keep a positive height
        let min_h = Self::c(1e-6);
        if mean[3] < min_h {
            mean[3] = min_h;
        }
        let covariance = state.covariance - gain * projected_cov * gain.transpose();
        Ok(KalmanState { mean, covariance })
    }

    /// Squared Mahalanobis distance of a measurement under the projected
    /// state distribution.
    pub fn gating_distance(&self, state: &KalmanState<T>, measurement: &Measurement<T>) -> T {
        let (projected_mean, projected_cov) = self.project(state);
        let Some(chol) = Cholesky::new(projected_cov) else {
            return T::max_value().unwrap_or_else(T::one);
        };
        let innovation = measurement - projected_mean;
        let solved = chol.solve(&innovation);
        innovation.dot(&solved)
    }
}
