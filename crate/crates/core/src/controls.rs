//! Horizontal controls on [0,1] and their endpoint maps.
//!
//! A control determines a horizontal curve from the identity via the
//! left-trivialized ODE. For step 2 the endpoint has the closed integral
//! form implemented in [`endpoint_step2`]; [`endpoint_product`] integrates
//! the ODE by group products and works for any supported step, serving as
//! the independent oracle.
//!
//! Grids are uniform with an odd point count so composite Simpson applies;
//! the running inner integral keeps fourth order by interpolating panel
//! midpoints cubically.

use std::collections::BTreeMap;

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::algebra::{GroupPoint, SubRiemannianStructure};
use crate::error::{NilgeoError, Result};

pub const DEFAULT_GRID: usize = 2049;

/// A control sampled on the uniform grid t_i = i/(N-1), stored in
/// horizontal coordinates (so the metric stays a plain matrix form).
#[derive(Debug, Clone, PartialEq)]
pub struct SampledControl {
    /// N x k sample matrix; row i is the control value at t_i.
    pub values: DMatrix<f64>,
}

impl SampledControl {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        let n = values.nrows();
        if n < 3 || n % 2 == 0 {
            return Err(NilgeoError::InvalidSpec(format!(
                "control grid must be odd and >= 3, got {n}"
            )));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(NilgeoError::InvalidSpec(
                "control contains non-finite samples".into(),
            ));
        }
        Ok(SampledControl { values })
    }

    pub fn zero(n: usize, k: usize) -> Self {
        SampledControl {
            values: DMatrix::zeros(n, k),
        }
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn k(&self) -> usize {
        self.values.ncols()
    }

    /// Builds a control by evaluating `f` on the grid.
    pub fn from_fn<F: FnMut(f64) -> DVector<f64>>(n: usize, k: usize, mut f: F) -> Result<Self> {
        let mut values = DMatrix::zeros(n, k);
        for i in 0..n {
            let t = i as f64 / (n - 1) as f64;
            values.row_mut(i).copy_from(&f(t).transpose());
        }
        SampledControl::new(values)
    }

    /// Cubic interpolation of the sample at an arbitrary time in [0,1].
    pub fn sample_at(&self, t: f64) -> DVector<f64> {
        let n = self.n();
        let h = 1.0 / (n - 1) as f64;
        let x = (t / h).clamp(0.0, (n - 1) as f64);
        // Four-point stencil around x.
        let mut i0 = x.floor() as usize;
        i0 = i0.saturating_sub(1).min(n - 4);
        let s = x - i0 as f64;
        let mut out = DVector::zeros(self.k());
        for (j, row) in (i0..i0 + 4).enumerate() {
            let mut w = 1.0;
            for l in 0..4 {
                if l != j {
                    w *= (s - l as f64) / (j as f64 - l as f64);
                }
            }
            out.axpy(w, &self.values.row(row).transpose(), 1.0);
        }
        out
    }

    /// Pointwise sum; grids must agree.
    pub fn add(&self, other: &SampledControl) -> Result<SampledControl> {
        if self.values.shape() != other.values.shape() {
            return Err(NilgeoError::DimensionMismatch(
                "control grids differ".into(),
            ));
        }
        Ok(SampledControl {
            values: &self.values + &other.values,
        })
    }

    pub fn scale(&self, c: f64) -> SampledControl {
        SampledControl {
            values: &self.values * c,
        }
    }

    /// Cubic resampling to a different odd grid.
    pub fn resample(&self, n_new: usize) -> Result<SampledControl> {
        SampledControl::from_fn(n_new, self.k(), |t| self.sample_at(t))
    }
}

/// Composite Simpson integral of each column; grid step 1/(N-1).
pub fn integrate_rows(values: &DMatrix<f64>) -> DVector<f64> {
    let n = values.nrows();
    assert!(n >= 3 && n % 2 == 1, "Simpson needs an odd grid");
    let h = 1.0 / (n - 1) as f64;
    let mut acc = DVector::zeros(values.ncols());
    for i in 0..n {
        let w = if i == 0 || i == n - 1 {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc.axpy(w, &values.row(i).transpose(), 1.0);
    }
    acc * (h / 3.0)
}

pub fn integrate_scalar(vals: &[f64]) -> f64 {
    let m = DMatrix::from_column_slice(vals.len(), 1, vals);
    integrate_rows(&m)[0]
}

/// Running integral F(t_i) of the sampled rows, fourth order.
///
/// Each grid panel is integrated by Simpson with the panel midpoint
/// recovered by cubic interpolation from neighbouring samples.
pub fn cumulative_rows(values: &DMatrix<f64>) -> DMatrix<f64> {
    let n = values.nrows();
    let k = values.ncols();
    assert!(n >= 3, "cumulative integral needs >= 3 samples");
    let h = 1.0 / (n - 1) as f64;
    let mut out = DMatrix::zeros(n, k);
    let row = |i: usize| values.row(i);
    for j in 0..n - 1 {
        // Panel midpoint by interpolation; one-sided stencils at the ends.
        let mid = if n == 3 {
            if j == 0 {
                row(0) * 0.375 + row(1) * 0.75 - row(2) * 0.125
            } else {
                row(0) * -0.125 + row(1) * 0.75 + row(2) * 0.375
            }
        } else if j == 0 {
            (row(0) * 5.0 + row(1) * 15.0 - row(2) * 5.0 + row(3)) / 16.0
        } else if j == n - 2 {
            (row(n - 4) - row(n - 3) * 5.0 + row(n - 2) * 15.0 + row(n - 1) * 5.0) / 16.0
        } else {
            (-row(j - 1) + row(j) * 9.0 + row(j + 1) * 9.0 - row(j + 2)) / 16.0
        };
        let inc = (row(j) + mid * 4.0 + row(j + 1)) * (h / 6.0);
        let prev = out.row(j).into_owned();
        out.row_mut(j + 1).copy_from(&(prev + inc));
    }
    out
}

/// Ambient N x dim sample matrix of a control.
fn ambient_rows(s: &SubRiemannianStructure, u: &SampledControl) -> DMatrix<f64> {
    &u.values * s.horizontal.transpose()
}

/// Closed-form endpoint of the step-2 horizontal curve:
/// integral of u plus half the integrated bracket of the running integral
/// against u.
pub fn endpoint_step2(s: &SubRiemannianStructure, u: &SampledControl) -> Result<GroupPoint> {
    if s.algebra.step != 2 {
        return Err(NilgeoError::UnsupportedStep {
            step: s.algebra.step,
            op: "endpoint_step2",
        });
    }
    if u.k() != s.k() {
        return Err(NilgeoError::DimensionMismatch("control width".into()));
    }
    let amb = ambient_rows(s, u);
    let run = cumulative_rows(&amb);
    let n = amb.nrows();
    let mut wedge = DMatrix::zeros(n, s.algebra.dim);
    for i in 0..n {
        let b = s
            .algebra
            .bracket(&run.row(i).transpose(), &amb.row(i).transpose());
        wedge.row_mut(i).copy_from(&b.transpose());
    }
    let lin = run.row(n - 1).transpose();
    Ok(lin + integrate_rows(&wedge) * 0.5)
}

/// Endpoint by stepwise group products: a fourth-order Magnus scheme whose
/// per-step increment is multiplied in with the exact truncated group law.
/// Valid for step 2 and 3; the cross-check oracle for [`endpoint_step2`].
pub fn endpoint_product_steps(
    s: &SubRiemannianStructure,
    u: &SampledControl,
    nsteps: usize,
) -> GroupPoint {
    let alg = &s.algebra;
    let h = 1.0 / nsteps as f64;
    let c = 3f64.sqrt() / 6.0;
    let mut gamma = alg.identity();
    for j in 0..nsteps {
        let t = j as f64 * h;
        let a1 = s.to_ambient(&u.sample_at(t + (0.5 - c) * h));
        let a2 = s.to_ambient(&u.sample_at(t + (0.5 + c) * h));
        // Two-node Gauss Magnus increment.
        let omega = (&a1 + &a2) * (h / 2.0)
            + alg.bracket(&a1, &a2) * (3f64.sqrt() * h * h / 12.0);
        gamma = alg.multiply(&gamma, &omega);
    }
    gamma
}

pub fn endpoint_product(s: &SubRiemannianStructure, u: &SampledControl) -> GroupPoint {
    endpoint_product_steps(s, u, (u.n() - 1) / 2)
}

/// Integral of the squared metric norm of the control.
pub fn energy(s: &SubRiemannianStructure, u: &SampledControl) -> f64 {
    let n = u.n();
    let vals: Vec<f64> = (0..n)
        .map(|i| {
            let r = u.values.row(i).transpose();
            s.ip(&r, &r)
        })
        .collect();
    integrate_scalar(&vals)
}

/// Integral of the metric norm of the control.
pub fn length(s: &SubRiemannianStructure, u: &SampledControl) -> f64 {
    let n = u.n();
    let vals: Vec<f64> = (0..n)
        .map(|i| {
            let r = u.values.row(i).transpose();
            s.ip(&r, &r).max(0.0).sqrt()
        })
        .collect();
    integrate_scalar(&vals)
}

/// A trigonometric-polynomial control: finitely many coefficients c_n on
/// the exponential basis e^{2 pi i n t}, n a nonzero integer, in
/// complexified horizontal coordinates.
#[derive(Debug, Clone, Default)]
pub struct FourierControl {
    pub coefficients: BTreeMap<i64, DVector<Complex<f64>>>,
}

impl FourierControl {
    pub fn new(coefficients: BTreeMap<i64, DVector<Complex<f64>>>) -> Result<Self> {
        if coefficients.contains_key(&0) {
            return Err(NilgeoError::InvalidSpec(
                "Fourier control must not contain a zero frequency".into(),
            ));
        }
        Ok(FourierControl { coefficients })
    }

    pub fn has_positive_support(&self) -> bool {
        self.coefficients.keys().all(|&n| n > 0)
    }
}

/// Closed-form endpoint and energy of the complex-form control
/// v(t) = sum c_n e^{2 pi i n t}: endpoint sum_n [c_n, c_{-n}] / (4 pi i n),
/// energy sum_n rho(c_n, c_n) (Hermitian).
pub fn fourier_endpoint_complex(
    s: &SubRiemannianStructure,
    v: &FourierControl,
) -> Result<(DVector<Complex<f64>>, f64)> {
    if v.coefficients.contains_key(&0) {
        return Err(NilgeoError::InvalidSpec(
            "zero frequency present in Fourier control".into(),
        ));
    }
    let dim = s.algebra.dim;
    let hc = s.horizontal.map(|x| Complex::new(x, 0.0));
    let mut endpoint = DVector::from_element(dim, Complex::new(0.0, 0.0));
    let mut energy = 0.0;
    for (&n, c) in &v.coefficients {
        if c.len() != s.k() {
            return Err(NilgeoError::DimensionMismatch("Fourier coefficient".into()));
        }
        // Hermitian metric energy of this mode.
        let mut e = Complex::new(0.0, 0.0);
        for a in 0..s.k() {
            for b in 0..s.k() {
                e += c[a].conj() * s.metric[(a, b)] * c[b];
            }
        }
        energy += e.re;
        if let Some(cm) = v.coefficients.get(&-n) {
            let ca = &hc * c;
            let cb = &hc * cm;
            let br = s.algebra.bracket_complex(&ca, &cb);
            let factor = Complex::new(0.0, 4.0 * std::f64::consts::PI * n as f64);
            endpoint += br.map(|x| x / factor);
        }
    }
    Ok((endpoint, energy))
}

/// Closed-form endpoint and energy of the real-form control
/// v(t) = sum_{n>0} Re(c_n e^{2 pi i n t}).
pub fn fourier_endpoint_real(
    s: &SubRiemannianStructure,
    v: &FourierControl,
) -> Result<(GroupPoint, f64)> {
    if !v.has_positive_support() {
        return Err(NilgeoError::InvalidSpec(
            "real-form Fourier control needs positive support".into(),
        ));
    }
    let dim = s.algebra.dim;
    let mut endpoint = DVector::zeros(dim);
    let mut energy = 0.0;
    for (&n, c) in &v.coefficients {
        let re: DVector<f64> = c.map(|x| x.re);
        let im: DVector<f64> = c.map(|x| x.im);
        let br = s
            .algebra
            .bracket(&s.to_ambient(&im), &s.to_ambient(&re));
        endpoint += br / (4.0 * std::f64::consts::PI * n as f64);
        energy += 0.5 * (s.ip(&re, &re) + s.ip(&im, &im));
    }
    Ok((endpoint, energy))
}

/// Samples the real form of a positive-support Fourier control.
pub fn fourier_to_sampled(v: &FourierControl, k: usize, n: usize) -> Result<SampledControl> {
    if !v.has_positive_support() {
        return Err(NilgeoError::InvalidSpec(
            "real-form Fourier control needs positive support".into(),
        ));
    }
    SampledControl::from_fn(n, k, |t| {
        let mut out = DVector::zeros(k);
        for (&m, c) in &v.coefficients {
            let phase = Complex::from_polar(1.0, 2.0 * std::f64::consts::PI * m as f64 * t);
            for a in 0..k {
                out[a] += (c[a] * phase).re;
            }
        }
        out
    })
}

/// Pointwise metric-orthogonal split u = u_inf + drift with u_inf in V and
/// drift in the intersection of the horizontal space with [g,g].
pub fn horizontal_split(
    s: &SubRiemannianStructure,
    u: &SampledControl,
) -> Result<(SampledControl, SampledControl)> {
    if s.algebra.step != 2 {
        return Err(NilgeoError::UnsupportedStep {
            step: s.algebra.step,
            op: "horizontal_split",
        });
    }
    if u.k() != s.k() {
        return Err(NilgeoError::DimensionMismatch("control width".into()));
    }
    // Projector onto V along the drift space, metric-orthogonal because the
    // frame columns are metric-orthonormal.
    let q = &s.frame_coords;
    let n = u.n();
    let mut v_part = DMatrix::zeros(n, s.k());
    let mut d_part = DMatrix::zeros(n, s.k());
    for i in 0..n {
        let c = u.values.row(i).transpose();
        let coords = q.transpose() * &s.metric * &c;
        let mut pv = DVector::zeros(s.k());
        let mut pd = DVector::zeros(s.k());
        for j in 0..s.k() {
            let col = q.column(j).clone_owned();
            if j < s.v_dim {
                pv.axpy(coords[j], &col, 1.0);
            } else {
                pd.axpy(coords[j], &col, 1.0);
            }
        }
        v_part.row_mut(i).copy_from(&pv.transpose());
        d_part.row_mut(i).copy_from(&pd.transpose());
    }
    Ok((SampledControl::new(v_part)?, SampledControl::new(d_part)?))
}

/// Time-rescaled concatenation on [0,1].
///
/// Each half is reparameterized by a smooth clock with vanishing endpoint
/// speed, so the spliced control is continuous (zero) at the seam and the
/// grid quadrature keeps its order. Endpoint and length are invariant under
/// reparameterization; energy is not preserved.
pub fn concat(u1: &SampledControl, u2: &SampledControl) -> Result<SampledControl> {
    if u1.k() != u2.k() {
        return Err(NilgeoError::DimensionMismatch("control widths differ".into()));
    }
    let mut m = u1.n().max(u2.n());
    if m % 2 == 0 {
        m += 1;
    }
    let n_out = 2 * m - 1;
    let two_pi = 2.0 * std::f64::consts::PI;
    // clock(s) traverses [0,1] with clock'(0) = clock'(1) = 0.
    let clock = |x: f64| x - (two_pi * x).sin() / two_pi;
    let rate = |x: f64| 1.0 - (two_pi * x).cos();
    SampledControl::from_fn(n_out, u1.k(), |t| {
        if t <= 0.5 {
            let x = 2.0 * t;
            u1.sample_at(clock(x)) * (2.0 * rate(x))
        } else {
            let x = 2.0 * t - 1.0;
            u2.sample_at(clock(x)) * (2.0 * rate(x))
        }
    })
}

/// Serializable control payload: either grid samples or positive-support
/// Fourier coefficients keyed by frequency.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControlJson {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fourier: Option<BTreeMap<String, Vec<[f64; 2]>>>,
}

pub fn sampled_to_json(u: &SampledControl) -> ControlJson {
    ControlJson {
        grid: Some(u.n()),
        values: Some(
            (0..u.n())
                .map(|i| u.values.row(i).iter().cloned().collect())
                .collect(),
        ),
        fourier: None,
    }
}

pub fn fourier_to_json(v: &FourierControl) -> ControlJson {
    ControlJson {
        grid: None,
        values: None,
        fourier: Some(
            v.coefficients
                .iter()
                .map(|(n, c)| (n.to_string(), c.iter().map(|z| [z.re, z.im]).collect()))
                .collect(),
        ),
    }
}

/// Either representation parsed back from JSON.
pub enum ControlRepr {
    Sampled(SampledControl),
    Fourier(FourierControl),
}

pub fn control_from_json(j: &ControlJson) -> Result<ControlRepr> {
    if let Some(values) = &j.values {
        let n = j.grid.unwrap_or(values.len());
        if n != values.len() {
            return Err(NilgeoError::InvalidSpec("grid field disagrees with rows".into()));
        }
        let k = values.first().map(|r| r.len()).unwrap_or(0);
        if k == 0 || values.iter().any(|r| r.len() != k) {
            return Err(NilgeoError::InvalidSpec("ragged control rows".into()));
        }
        let mut m = DMatrix::zeros(n, k);
        for (i, r) in values.iter().enumerate() {
            for (c, &x) in r.iter().enumerate() {
                m[(i, c)] = x;
            }
        }
        return Ok(ControlRepr::Sampled(SampledControl::new(m)?));
    }
    if let Some(fourier) = &j.fourier {
        let mut coeffs = BTreeMap::new();
        for (key, row) in fourier {
            let n: i64 = key.parse().map_err(|_| {
                NilgeoError::InvalidSpec(format!("frequency key '{key}' is not an integer"))
            })?;
            let c = DVector::from_iterator(row.len(), row.iter().map(|p| Complex::new(p[0], p[1])));
            coeffs.insert(n, c);
        }
        return Ok(ControlRepr::Fourier(FourierControl::new(coeffs)?));
    }
    Err(NilgeoError::InvalidSpec(
        "control JSON needs 'values' or 'fourier'".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::load_bundled;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn heis() -> SubRiemannianStructure {
        load_bundled("heisenberg").unwrap()
    }

    /// Smooth random control from a handful of Fourier modes plus a constant.
    fn random_smooth(rng: &mut impl Rng, n: usize, k: usize, modes: usize) -> SampledControl {
        let consts: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut cos_c = vec![vec![0.0; k]; modes];
        let mut sin_c = vec![vec![0.0; k]; modes];
        for m in 0..modes {
            for a in 0..k {
                cos_c[m][a] = rng.gen_range(-1.0..1.0);
                sin_c[m][a] = rng.gen_range(-1.0..1.0);
            }
        }
        SampledControl::from_fn(n, k, |t| {
            let mut v = DVector::from_vec(consts.clone());
            for m in 0..modes {
                let w = 2.0 * std::f64::consts::PI * (m + 1) as f64 * t;
                for a in 0..k {
                    v[a] += cos_c[m][a] * w.cos() + sin_c[m][a] * w.sin();
                }
            }
            v
        })
        .unwrap()
    }

    #[test]
    fn constant_control_endpoint() {
        let s = heis();
        let u = SampledControl::from_fn(257, 2, |_| DVector::from_vec(vec![1.0, 0.0])).unwrap();
        let p = endpoint_step2(&s, &u).unwrap();
        assert_relative_eq!(p[0], 1.0, epsilon = 1e-12);
        assert!(p[1].abs() < 1e-12 && p[2].abs() < 1e-12);
        let q = endpoint_product(&s, &u);
        assert!((p - q).amax() < 1e-10);
    }

    #[test]
    fn circle_control_endpoint_matches_closed_form() {
        // v(t) = Re((X+iY) f_1) = (cos, -sin): endpoint (0, 0, -1/(4 pi)).
        let s = heis();
        let u = SampledControl::from_fn(2049, 2, |t| {
            let w = 2.0 * std::f64::consts::PI * t;
            DVector::from_vec(vec![w.cos(), -w.sin()])
        })
        .unwrap();
        let p = endpoint_step2(&s, &u).unwrap();
        assert!(p[0].abs() < 1e-10 && p[1].abs() < 1e-10);
        assert_relative_eq!(p[2], -1.0 / (4.0 * std::f64::consts::PI), epsilon = 1e-10);
    }

    #[test]
    fn square_loop_signed_area() {
        // Unit-square loop: planar area 1, so the vertical coordinate is 1.
        // Quarter boundaries carry averaged samples; accuracy drops to the
        // jump-at-seam level, checked against the Green's theorem value.
        let n = 2049;
        let u = SampledControl::from_fn(n, 2, |t| {
            let q = (t * 4.0).floor().min(3.0) as usize;
            let on_seam = ((t * 4.0) - (t * 4.0).round()).abs() < 1e-12 && t > 0.0 && t < 1.0;
            let dir = |q: usize| match q {
                0 => DVector::from_vec(vec![4.0, 0.0]),
                1 => DVector::from_vec(vec![0.0, 4.0]),
                2 => DVector::from_vec(vec![-4.0, 0.0]),
                _ => DVector::from_vec(vec![0.0, -4.0]),
            };
            if on_seam {
                (dir(q.saturating_sub(1).min(3)) + dir((t * 4.0).round() as usize)) * 0.5
            } else {
                dir(q)
            }
        })
        .unwrap();
        let s = heis();
        let p = endpoint_step2(&s, &u).unwrap();
        assert!(p[0].abs() < 5e-3 && p[1].abs() < 5e-3);
        assert_relative_eq!(p[2], 1.0, epsilon = 1e-2);
    }

    #[test]
    fn energy_and_length() {
        let s = heis();
        let u = SampledControl::from_fn(257, 2, |_| DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert_relative_eq!(energy(&s, &u), 1.0, epsilon = 1e-12);
        assert_relative_eq!(length(&s, &u), 1.0, epsilon = 1e-12);

        let circle = SampledControl::from_fn(2049, 2, |t| {
            let w = 2.0 * std::f64::consts::PI * t;
            DVector::from_vec(vec![w.cos(), -w.sin()])
        })
        .unwrap();
        assert_relative_eq!(energy(&s, &circle), 1.0, epsilon = 1e-10);

        // Length-squared never exceeds energy.
        let mut rng = crate::rng::rng_for(5, 0);
        for _ in 0..10 {
            let u = random_smooth(&mut rng, 513, 2, 3);
            let l = length(&s, &u);
            assert!(l * l <= energy(&s, &u) + 1e-9);
        }
    }

    #[test]
    fn endpoint_oracles_agree_on_smooth_controls() {
        let mut rng = crate::rng::rng_for(42, 0);
        for name in ["heisenberg", "heisenberg_riemannian", "free23"] {
            let s = load_bundled(name).unwrap();
            for _ in 0..5 {
                let u = random_smooth(&mut rng, 4097, s.k(), 4);
                let a = endpoint_step2(&s, &u).unwrap();
                let b = endpoint_product(&s, &u);
                let diff = (a - b).amax();
                assert!(diff < 1e-7, "oracle disagreement on {name}: {diff:.3e}");
            }
        }
    }

    #[test]
    fn richardson_order_of_endpoint() {
        // Error vs a fine reference shrinks at fourth order in the grid.
        let s = heis();
        let mut rng = crate::rng::rng_for(9, 0);
        let fine = random_smooth(&mut rng, 8193, 2, 3);
        let reference = endpoint_step2(&s, &fine).unwrap();
        let mut errs = Vec::new();
        for &n in &[129usize, 257, 513] {
            let u = fine.resample(n).unwrap();
            let e = (endpoint_step2(&s, &u).unwrap() - &reference).amax();
            errs.push(e);
        }
        assert!(errs[0] / errs[1] > 8.0, "order too low: {errs:?}");
        assert!(errs[1] / errs[2] > 8.0, "order too low: {errs:?}");
    }

    #[test]
    fn fourier_closed_forms() {
        let s = heis();
        // Single positive coefficient, complex form: endpoint vanishes.
        let mut coeffs = BTreeMap::new();
        coeffs.insert(
            1i64,
            DVector::from_vec(vec![Complex::new(1.0, 0.0), Complex::new(0.0, 0.0)]),
        );
        let v = FourierControl::new(coeffs).unwrap();
        let (p, e) = fourier_endpoint_complex(&s, &v).unwrap();
        assert!(p.iter().all(|z| z.norm() < 1e-14));
        assert_relative_eq!(e, 1.0, epsilon = 1e-14);

        // Conjugate pair at n = +-1 for c = X + iY: endpoint -Z/pi.
        let c = DVector::from_vec(vec![Complex::new(1.0, 0.0), Complex::new(0.0, 1.0)]);
        let mut coeffs = BTreeMap::new();
        coeffs.insert(1i64, c.clone());
        coeffs.insert(-1i64, c.map(|z| z.conj()));
        let v = FourierControl::new(coeffs).unwrap();
        let (p, e) = fourier_endpoint_complex(&s, &v).unwrap();
        assert_relative_eq!(p[2].re, -1.0 / std::f64::consts::PI, epsilon = 1e-14);
        assert!(p[2].im.abs() < 1e-14);
        assert_relative_eq!(e, 4.0, epsilon = 1e-14);

        // Real form at n = 1: endpoint -Z/(4 pi), energy 1.
        let mut coeffs = BTreeMap::new();
        coeffs.insert(1i64, c.clone());
        let v = FourierControl::new(coeffs).unwrap();
        let (p, e) = fourier_endpoint_real(&s, &v).unwrap();
        assert_relative_eq!(p[2], -1.0 / (4.0 * std::f64::consts::PI), epsilon = 1e-14);
        assert_relative_eq!(e, 1.0, epsilon = 1e-14);

        // Sampled real form agrees with the closed form.
        let sampled = fourier_to_sampled(&v, 2, 2049).unwrap();
        let q = endpoint_step2(&s, &sampled).unwrap();
        assert!((q - p).amax() < 1e-10);
    }

    #[test]
    fn fourier_real_form_at_n2() {
        let s = heis();
        let c = DVector::from_vec(vec![Complex::new(1.0, 0.0), Complex::new(0.0, 1.0)]);
        let mut coeffs = BTreeMap::new();
        coeffs.insert(2i64, c);
        let v = FourierControl::new(coeffs).unwrap();
        let (p, _) = fourier_endpoint_real(&s, &v).unwrap();
        assert_relative_eq!(p[2], -1.0 / (8.0 * std::f64::consts::PI), epsilon = 1e-14);
        let sampled = fourier_to_sampled(&v, 2, 2049).unwrap();
        let q = endpoint_step2(&s, &sampled).unwrap();
        assert!((q - p).amax() < 1e-10);
    }

    #[test]
    fn zero_frequency_rejected() {
        let mut coeffs = BTreeMap::new();
        coeffs.insert(0i64, DVector::from_element(2, Complex::new(1.0, 0.0)));
        assert!(FourierControl::new(coeffs).is_err());
    }

    #[test]
    fn split_on_riemannian_structures() {
        let s = load_bundled("heisenberg_riemannian").unwrap();
        let u = SampledControl::from_fn(257, 3, |_| DVector::from_vec(vec![1.0, 0.0, 1.0])).unwrap();
        let (vi, dr) = horizontal_split(&s, &u).unwrap();
        assert!((vi.values.column(0).clone_owned() - DVector::from_element(257, 1.0)).amax() < 1e-12);
        assert!(vi.values.column(2).amax() < 1e-12);
        assert!(dr.values.column(0).amax() < 1e-12);
        assert!((dr.values.column(2).clone_owned() - DVector::from_element(257, 1.0)).amax() < 1e-12);
        // Energies add.
        assert_relative_eq!(
            energy(&s, &u),
            energy(&s, &vi) + energy(&s, &dr),
            epsilon = 1e-12
        );

        let hxr = load_bundled("hxr_riemannian").unwrap();
        let u = SampledControl::from_fn(257, 4, |_| DVector::from_vec(vec![0.0, 1.0, 2.0, 1.0]))
            .unwrap();
        let (vi, dr) = horizontal_split(&hxr, &u).unwrap();
        assert_relative_eq!(vi.values[(0, 1)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(vi.values[(0, 3)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(dr.values[(0, 2)], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn concat_multiplies_endpoints() {
        let s = heis();
        let ux = SampledControl::from_fn(257, 2, |_| DVector::from_vec(vec![1.0, 0.0])).unwrap();
        let uy = SampledControl::from_fn(257, 2, |_| DVector::from_vec(vec![0.0, 1.0])).unwrap();
        let w = concat(&ux, &uy).unwrap();
        let p = endpoint_step2(&s, &w).unwrap();
        assert!(p[0].abs() - 1.0 < 1e-9);
        assert_relative_eq!(p[0], 1.0, epsilon = 1e-9);
        assert_relative_eq!(p[1], 1.0, epsilon = 1e-9);
        assert_relative_eq!(p[2], 0.5, epsilon = 1e-9);

        // Path followed by its reversal comes home.
        let mut rng = crate::rng::rng_for(8, 0);
        let u = random_smooth(&mut rng, 513, 2, 3);
        let back = SampledControl::from_fn(513, 2, |t| -u.sample_at(1.0 - t)).unwrap();
        let loop_ctrl = concat(&u, &back).unwrap();
        let p = endpoint_step2(&s, &loop_ctrl).unwrap();
        assert!(p.amax() < 1e-8, "loop endpoint {p:?}");

        // Concat with zero preserves the endpoint.
        let z = SampledControl::zero(257, 2);
        let w = concat(&u, &z).unwrap();
        let p = endpoint_step2(&s, &w).unwrap();
        let q = endpoint_step2(&s, &u).unwrap();
        assert!((p - q).amax() < 1e-8);
    }

    #[test]
    fn wedge_additivity_for_moment_orthogonal_perturbations() {
        // If v integrates to zero and its running-bracket moment against u
        // vanishes, endpoints add.
        let s = heis();
        let n = 2049;
        let mut rng = crate::rng::rng_for(13, 0);
        for trial in 0..5 {
            let u = random_smooth(&mut rng, n, 2, 3);
            let amb = ambient_rows(&s, &u);
            let run = cumulative_rows(&amb);
            // Candidate basis: sin/cos modes 1..6 on both coordinates.
            let mut basis: Vec<SampledControl> = Vec::new();
            for m in 1..=6 {
                for a in 0..2 {
                    for phase in 0..2 {
                        basis.push(
                            SampledControl::from_fn(n, 2, |t| {
                                let w = 2.0 * std::f64::consts::PI * m as f64 * t;
                                let val = if phase == 0 { w.cos() } else { w.sin() };
                                let mut v = DVector::zeros(2);
                                v[a] = val;
                                v
                            })
                            .unwrap(),
                        );
                    }
                }
            }
            // Moment constraints: integral of [run(t), b(t)] dt = 0 (per derived
            // coordinate); integral of b is zero already for pure modes.
            let mut cons = DMatrix::zeros(1, basis.len());
            for (j, b) in basis.iter().enumerate() {
                let bamb = ambient_rows(&s, b);
                let mut w = DMatrix::zeros(n, 3);
                for i in 0..n {
                    let br = s
                        .algebra
                        .bracket(&run.row(i).transpose(), &bamb.row(i).transpose());
                    w.row_mut(i).copy_from(&br.transpose());
                }
                cons[(0, j)] = integrate_rows(&w)[2];
            }
            let ns = crate::linalg::nullspace(&cons, 1e-12);
            assert!(ns.ncols() > 0);
            let mix: DVector<f64> =
                DVector::from_fn(ns.ncols(), |_, _| rng.gen_range(-1.0..1.0));
            let coef = &ns * mix;
            let mut v = SampledControl::zero(n, 2);
            for (j, b) in basis.iter().enumerate() {
                v = v.add(&b.scale(coef[j])).unwrap();
            }
            let sum = u.add(&v).unwrap();
            let lhs = endpoint_step2(&s, &sum).unwrap();
            let rhs = endpoint_step2(&s, &u).unwrap() + endpoint_step2(&s, &v).unwrap();
            assert!((lhs - rhs).amax() < 1e-7, "trial {trial}");
        }
    }

    #[test]
    fn control_json_round_trip() {
        let mut rng = crate::rng::rng_for(2, 0);
        let u = random_smooth(&mut rng, 65, 2, 2);
        let j = sampled_to_json(&u);
        let text = serde_json::to_string(&j).unwrap();
        let back: ControlJson = serde_json::from_str(&text).unwrap();
        match control_from_json(&back).unwrap() {
            ControlRepr::Sampled(u2) => assert!((u2.values - u.values).amax() < 1e-15),
            _ => panic!("expected sampled"),
        }

        let c = DVector::from_vec(vec![Complex::new(1.0, 2.0), Complex::new(0.5, -1.0)]);
        let mut coeffs = BTreeMap::new();
        coeffs.insert(3i64, c);
        let v = FourierControl::new(coeffs).unwrap();
        let j = fourier_to_json(&v);
        let text = serde_json::to_string(&j).unwrap();
        let back: ControlJson = serde_json::from_str(&text).unwrap();
        match control_from_json(&back).unwrap() {
            ControlRepr::Fourier(v2) => {
                assert_eq!(v2.coefficients.len(), 1);
                assert_eq!(v2.coefficients[&3][0], Complex::new(1.0, 2.0));
            }
            _ => panic!("expected fourier"),
        }
    }
}
