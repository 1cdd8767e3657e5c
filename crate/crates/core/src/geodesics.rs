//! Explicit geodesic families.
//!
//! For any step-2 structure, normal geodesics have the closed form
//! x(t) = c - e^{tM} c + t b in the horizontal V-part, with a vertical
//! Simpson lift and a constant drift. For the Heisenberg group both the
//! sub-Riemannian and the Riemannian distances are computed exactly by
//! one-dimensional monotone root-finding; these exact solvers serve as
//! ground truth for the optimizer.

use nalgebra::{DMatrix, DVector};

use crate::algebra::{GroupPoint, SubRiemannianStructure};
use crate::controls::SampledControl;
use crate::error::{NilgeoError, Result};
use crate::linalg;

const PI: f64 = std::f64::consts::PI;
const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Parameters of a step-2 normal geodesic: skew matrix M on the
/// orthonormal V-frame, kernel velocity b, range offset c, vertical drift.
#[derive(Debug, Clone)]
pub struct NormalGeodesicParams {
    /// Skew matrix in V-frame coordinates (v_dim x v_dim).
    pub m: DMatrix<f64>,
    /// Kernel part of the initial velocity, M b = 0.
    pub b: DVector<f64>,
    /// Range-of-M offset.
    pub c: DVector<f64>,
    /// Drift in the frame coordinates of the horizontal-vertical part.
    pub zeta: DVector<f64>,
}

impl NormalGeodesicParams {
    pub fn validate(&self, s: &SubRiemannianStructure) -> Result<()> {
        let v = s.v_dim;
        if self.m.nrows() != v || self.m.ncols() != v || self.b.len() != v || self.c.len() != v {
            return Err(NilgeoError::DimensionMismatch(
                "geodesic parameters must live on V".into(),
            ));
        }
        if self.zeta.len() != s.drift_dim() {
            return Err(NilgeoError::DimensionMismatch(
                "drift must live on the vertical horizontal part".into(),
            ));
        }
        let scale = 1.0 + self.m.amax();
        if (self.m.transpose() + &self.m).amax() > 1e-10 * scale {
            return Err(NilgeoError::InvalidSpec("M must be skew".into()));
        }
        if (&self.m * &self.b).amax() > 1e-10 * scale * (1.0 + self.b.amax()) {
            return Err(NilgeoError::InvalidSpec("b must lie in ker M".into()));
        }
        // c orthogonal to ker M characterizes the range of a skew matrix.
        let ker = linalg::nullspace(&self.m, 1e-12);
        if (ker.transpose() * &self.c).amax() > 1e-10 * (1.0 + self.c.amax()) {
            return Err(NilgeoError::InvalidSpec("c must lie in range M".into()));
        }
        Ok(())
    }

    /// Splits an initial velocity w into the (b, c) normal form:
    /// b the kernel part, c solving w - b = -M c within range(M).
    pub fn from_velocity(
        m: DMatrix<f64>,
        w: &DVector<f64>,
        zeta: DVector<f64>,
    ) -> NormalGeodesicParams {
        let ker = linalg::nullspace(&m, 1e-12);
        let mut b = DVector::zeros(w.len());
        for j in 0..ker.ncols() {
            let q = ker.column(j).clone_owned();
            b.axpy(q.dot(w) / q.dot(&q), &q, 1.0);
        }
        let range_part = w - &b;
        let c = -m
            .clone()
            .pseudo_inverse(1e-12)
            .map(|pinv| pinv * range_part)
            .unwrap_or_else(|_| DVector::zeros(w.len()));
        NormalGeodesicParams { m, b, c, zeta }
    }

    /// Squared constant speed |w|^2 + |zeta|^2 of the geodesic.
    pub fn speed_squared(&self) -> f64 {
        let w = &self.b - &self.m * &self.c;
        w.norm_squared() + self.zeta.norm_squared()
    }
}

/// Horizontal V-part x(t) and its derivative in V-frame coordinates.
fn x_and_dx(p: &NormalGeodesicParams, t: f64) -> (DVector<f64>, DVector<f64>) {
    let e = linalg::expm(&(&p.m * t));
    let x = &p.c - &e * &p.c + &p.b * t;
    let dx = -(&p.m * (&e * &p.c)) + &p.b;
    (x, dx)
}

/// Point of the normal geodesic at time t: horizontal part from the closed
/// form, vertical part by Simpson on an internal grid, plus the drift.
pub fn normal_geodesic_point(
    s: &SubRiemannianStructure,
    params: &NormalGeodesicParams,
    t: f64,
) -> Result<GroupPoint> {
    if s.algebra.step != 2 {
        return Err(NilgeoError::UnsupportedStep {
            step: s.algebra.step,
            op: "normal_geodesic_point",
        });
    }
    params.validate(s)?;
    let frame = s.frame_ambient();
    let v_cols: Vec<_> = (0..s.v_dim).map(|j| frame.column(j).clone_owned()).collect();
    let to_amb = |coords: &DVector<f64>| -> DVector<f64> {
        let mut out = DVector::zeros(s.algebra.dim);
        for (j, col) in v_cols.iter().enumerate() {
            out.axpy(coords[j], col, 1.0);
        }
        out
    };
    let mut zeta_amb = DVector::zeros(s.algebra.dim);
    for j in 0..s.drift_dim() {
        zeta_amb.axpy(params.zeta[j], &frame.column(s.v_dim + j).clone_owned(), 1.0);
    }

    let n = 1025;
    let mut wedge = DMatrix::zeros(n, s.algebra.dim);
    for i in 0..n {
        let tau = t * i as f64 / (n - 1) as f64;
        let (x, dx) = x_and_dx(params, tau);
        let br = s.algebra.bracket(&to_amb(&x), &to_amb(&dx));
        wedge.row_mut(i).copy_from(&br.transpose());
    }
    // integrate_rows spans [0,1]; rescale to [0,t].
    let vertical = crate::controls::integrate_rows(&wedge) * (0.5 * t);
    let (xt, _) = x_and_dx(params, t);
    Ok(to_amb(&xt) + vertical + zeta_amb * t)
}

/// The control generating the geodesic, sampled on an odd grid.
pub fn normal_geodesic_control(
    s: &SubRiemannianStructure,
    params: &NormalGeodesicParams,
    n: usize,
) -> Result<SampledControl> {
    params.validate(s)?;
    SampledControl::from_fn(n, s.k(), |t| {
        let (_, dx) = x_and_dx(params, t);
        let mut coords = DVector::zeros(s.k());
        for j in 0..s.v_dim {
            coords[j] = dx[j];
        }
        for j in 0..s.drift_dim() {
            coords[s.v_dim + j] = params.zeta[j];
        }
        &s.frame_coords * coords
    })
}

/// (phi - sin phi) / (8 sin^2(phi/2)), the vertical-to-planar ratio of the
/// sub-Riemannian Heisenberg geodesic arc; strictly increasing on (0, 2pi).
fn sr_ratio(phi: f64) -> f64 {
    let s = (phi / 2.0).sin();
    (phi - phi.sin()) / (8.0 * s * s)
}

/// Exact sub-Riemannian Heisenberg distance from the identity.
pub fn heisenberg_sr_distance(p: &GroupPoint) -> f64 {
    assert_eq!(p.len(), 3, "Heisenberg point");
    let rho = p[0].hypot(p[1]);
    let z = p[2].abs();
    if z < 1e-300 {
        return rho;
    }
    if rho < 1e-14 * (1.0 + z.sqrt()) {
        return 2.0 * (PI * z).sqrt();
    }
    let target = z / (rho * rho);
    // Monotone bracket for the arc angle.
    let mut lo = 1e-12;
    let mut hi = TWO_PI - 1e-12;
    if sr_ratio(hi) < target {
        // Extremely vertical target; the bracket endpoint is the answer
        // to working precision.
        let s = (hi / 2.0).sin();
        return rho * hi / (2.0 * s);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if sr_ratio(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    let mut phi = 0.5 * (lo + hi);
    // Newton polish on f(phi) = ratio(phi) - target.
    for _ in 0..5 {
        let f = sr_ratio(phi) - target;
        let h = 1e-7;
        let df = (sr_ratio(phi + h) - sr_ratio(phi - h)) / (2.0 * h);
        if !df.is_finite() || df.abs() < 1e-300 {
            break;
        }
        let step = f / df;
        let next = phi - step;
        if next > lo && next < hi {
            phi = next;
        } else {
            break;
        }
    }
    rho * phi / (2.0 * (phi / 2.0).sin())
}

/// Riemannian Heisenberg geodesic family from the identity.
#[derive(Debug, Clone, Copy)]
pub struct HeisenbergGeodesicParams {
    /// Curvature parameter, > 0.
    pub k: f64,
    /// Initial angle in [0, pi).
    pub theta: f64,
    /// Duration in (0, 2 pi / k).
    pub t: f64,
}

impl HeisenbergGeodesicParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0) || !(0.0..PI).contains(&self.theta) {
            return Err(NilgeoError::InvalidSpec(
                "need k > 0 and theta in [0, pi)".into(),
            ));
        }
        if !(self.t > 0.0 && self.t < TWO_PI / self.k) {
            return Err(NilgeoError::InvalidSpec("need 0 < t < 2 pi / k".into()));
        }
        Ok(())
    }
}

/// (cos(a) - 1) / k and sin(a) / k with series fallbacks for tiny k.
fn planar_parts(k: f64, t: f64) -> (f64, f64) {
    let a = k * t;
    if k < 1e-4 {
        // cos(kt)-1 over k and sin(kt)/k to sixth order in k.
        let c = -k * t * t / 2.0 + k.powi(3) * t.powi(4) / 24.0 - k.powi(5) * t.powi(6) / 720.0;
        let s = t - k * k * t.powi(3) / 6.0 + k.powi(4) * t.powi(5) / 120.0;
        (c, s)
    } else {
        ((a.cos() - 1.0) / k, a.sin() / k)
    }
}

/// (kt - sin(kt)) / (2 k^2) with a series fallback.
fn vertical_part(k: f64, t: f64) -> f64 {
    let a = k * t;
    if a < 1e-4 {
        k * t.powi(3) / 12.0 - k.powi(3) * t.powi(5) / 240.0 + k.powi(5) * t.powi(7) / 10080.0
    } else {
        (a - a.sin()) / (2.0 * k * k)
    }
}

/// Point reached at time t by the Riemannian Heisenberg geodesic with the
/// given parameters; constant speed sqrt(1 + k^2).
pub fn heisenberg_riemannian_endpoint(params: &HeisenbergGeodesicParams) -> GroupPoint {
    let HeisenbergGeodesicParams { k, theta, t } = *params;
    let (c, s) = planar_parts(k, t);
    let x = theta.cos() * c - theta.sin() * s;
    let y = theta.sin() * c + theta.cos() * s;
    let z = vertical_part(k, t) + k * t;
    DVector::from_vec(vec![x, y, z])
}

/// The sphere profile p(alpha) in the xz half-plane: every point is at
/// Riemannian distance exactly r.
pub fn heisenberg_profile(r: f64, alpha: f64) -> Result<GroupPoint> {
    if !(alpha > 0.0 && alpha < TWO_PI.min(r)) {
        return Err(NilgeoError::InvalidSpec(
            "need 0 < alpha < min(2 pi, r)".into(),
        ));
    }
    // 2 sin(alpha/2) = sqrt(2 - 2 cos alpha) without cancellation.
    let x = (r * r - alpha * alpha).sqrt() * 2.0 * (alpha / 2.0).sin() / alpha;
    let z = (r * r - alpha * alpha) * (alpha - alpha.sin()) / (2.0 * alpha * alpha) + alpha;
    Ok(DVector::from_vec(vec![x, 0.0, z]))
}

/// (alpha - sin alpha) / (2 - 2 cos alpha), continuous and increasing from 0.
fn rr_ratio(alpha: f64) -> f64 {
    if alpha < 1e-4 {
        // Leading series alpha/6 + alpha^3/360.
        alpha / 6.0 + alpha.powi(3) / 360.0
    } else {
        let s = 2.0 * (alpha / 2.0).sin();
        (alpha - alpha.sin()) / (s * s)
    }
}

/// Exact Riemannian Heisenberg distance from the identity.
///
/// The sphere profile gives, for a point with planar radius rho and height
/// zt, the scalar equation rho^2 ratio(alpha)/2 + alpha = zt with a
/// strictly increasing left side; its root determines the radius.
pub fn heisenberg_riemannian_distance(p: &GroupPoint) -> f64 {
    assert_eq!(p.len(), 3, "Heisenberg point");
    let rho = p[0].hypot(p[1]);
    let zt = p[2].abs();
    if zt < 1e-14 {
        return rho;
    }
    if rho < 1e-14 {
        // On the vertical axis the segment wins up to the conjugate height.
        return if zt <= TWO_PI {
            zt
        } else {
            (4.0 * PI * (zt - PI)).sqrt()
        };
    }
    let g = |alpha: f64| rho * rho * rr_ratio(alpha) / 2.0 + alpha;
    let mut lo = 0.0;
    let mut hi = TWO_PI - 1e-13;
    if g(hi) < zt {
        // Numerically at the cusp; fall back to the axis formula which is
        // the limit of the profile there.
        let r2 = rho * rho * TWO_PI * TWO_PI / (2.0 - 2.0 * hi.cos()).max(1e-300)
            + TWO_PI * TWO_PI;
        return r2.sqrt().min((4.0 * PI * (zt - PI)).sqrt());
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < zt {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 * (1.0 + hi) {
            break;
        }
    }
    let alpha = 0.5 * (lo + hi);
    let r2 = alpha * alpha + rho * rho * alpha * alpha / (2.0 - 2.0 * alpha.cos()).max(1e-300);
    r2.sqrt()
}
