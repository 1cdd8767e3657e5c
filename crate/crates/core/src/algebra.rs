//! Nilpotent Lie algebras by structure constants, the exponential-chart
//! group law, sub-Riemannian structures and structure-preserving maps.
//!
//! Algebras are loaded from JSON and validated up front: antisymmetry,
//! Jacobi, nilpotency of the declared step. Everything downstream may then
//! assume a genuine Lie algebra.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{NilgeoError, Result};
use crate::linalg;

/// A point of the group in exponential coordinates.
pub type GroupPoint = DVector<f64>;

/// Relative threshold for all rank decisions on algebra data.
pub const RANK_TOL: f64 = 1e-10;

/// Relative tolerance for the norm-equality hypothesis of graph isometries.
pub const NORM_EQ_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Deserialize, Serialize)]
struct BracketEntry {
    i: usize,
    j: usize,
    coeffs: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
struct AlgebraFile {
    dim: usize,
    step: u8,
    basis: Vec<String>,
    brackets: Vec<BracketEntry>,
    horizontal: serde_json::Value,
    metric: Vec<f64>,
}

/// A nilpotent Lie algebra of step 2 or 3 with an explicit bracket table.
#[derive(Debug, Clone)]
pub struct NilpotentAlgebraSpec {
    pub dim: usize,
    pub step: u8,
    pub basis_names: Vec<String>,
    /// table[i * dim + j] = [e_i, e_j] as a coordinate vector.
    table: Vec<DVector<f64>>,
    /// Coordinates spanning [g, g].
    pub derived_indices: Vec<usize>,
    /// Grading weight of each coordinate (1 on the complement of [g,g]).
    pub weights: Vec<u32>,
    hash: u64,
}

impl NilpotentAlgebraSpec {
    fn from_file_parts(file: &AlgebraFile) -> Result<Self> {
        let dim = file.dim;
        if dim == 0 {
            return Err(NilgeoError::InvalidSpec("dim must be positive".into()));
        }
        if file.step != 2 && file.step != 3 {
            return Err(NilgeoError::InvalidSpec(format!(
                "step must be 2 or 3, got {}",
                file.step
            )));
        }
        if file.basis.len() != dim {
            return Err(NilgeoError::InvalidSpec(format!(
                "{} basis names for dim {}",
                file.basis.len(),
                dim
            )));
        }
        let mut table = vec![DVector::zeros(dim); dim * dim];
        for entry in &file.brackets {
            if entry.i >= dim || entry.j >= dim {
                return Err(NilgeoError::InvalidSpec(format!(
                    "bracket index ({},{}) out of range",
                    entry.i, entry.j
                )));
            }
            if entry.i == entry.j {
                return Err(NilgeoError::InvalidSpec(format!(
                    "bracket [e_{0}, e_{0}] must be zero",
                    entry.i
                )));
            }
            let mut v = DVector::zeros(dim);
            for (k, &c) in &entry.coeffs {
                let k: usize = k.parse().map_err(|_| {
                    NilgeoError::InvalidSpec(format!("coefficient key '{k}' is not an index"))
                })?;
                if k >= dim {
                    return Err(NilgeoError::InvalidSpec(format!(
                        "coefficient index {k} out of range"
                    )));
                }
                v[k] = c;
            }
            table[entry.i * dim + entry.j] = v.clone();
            table[entry.j * dim + entry.i] = -v;
        }

        let mut derived_indices = Vec::new();
        for k in 0..dim {
            if table.iter().any(|v| v[k].abs() > 0.0) {
                derived_indices.push(k);
            }
        }

        let hash = fnv64(serde_json::to_string(file)?.as_bytes());
        let mut alg = NilpotentAlgebraSpec {
            dim,
            step: file.step,
            basis_names: file.basis.clone(),
            table,
            derived_indices,
            weights: vec![1; dim],
            hash,
        };
        alg.compute_weights()?;
        alg.validate()?;
        Ok(alg)
    }

    /// Grading weights: 1 on the complement of [g,g]; a derived coordinate
    /// inherits weight(i) + weight(j) from the brackets producing it.
    fn compute_weights(&mut self) -> Result<()> {
        for &k in &self.derived_indices {
            self.weights[k] = 0;
        }
        for _ in 0..self.dim {
            for i in 0..self.dim {
                for j in 0..self.dim {
                    let v = &self.table[i * self.dim + j];
                    if self.weights[i] == 0 || self.weights[j] == 0 {
                        continue;
                    }
                    let w = self.weights[i] + self.weights[j];
                    for k in 0..self.dim {
                        if v[k].abs() > 0.0 && self.weights[k] == 0 {
                            self.weights[k] = w;
                        }
                    }
                }
            }
        }
        if self.weights.iter().any(|&w| w == 0) {
            return Err(NilgeoError::InvalidSpec(
                "bracket table is not graded by the coordinate basis".into(),
            ));
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        let n = self.dim;
        // Jacobi on all basis triples.
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let ei = DVector::from_fn(n, |r, _| if r == i { 1.0 } else { 0.0 });
                    let ej = DVector::from_fn(n, |r, _| if r == j { 1.0 } else { 0.0 });
                    let ek = DVector::from_fn(n, |r, _| if r == k { 1.0 } else { 0.0 });
                    let jac = self.bracket(&ei, &self.bracket(&ej, &ek))
                        + self.bracket(&ej, &self.bracket(&ek, &ei))
                        + self.bracket(&ek, &self.bracket(&ei, &ej));
                    if jac.amax() > 1e-12 {
                        return Err(NilgeoError::InvalidSpec(format!(
                            "Jacobi identity fails on triple ({}, {}, {})",
                            self.basis_names[i], self.basis_names[j], self.basis_names[k]
                        )));
                    }
                }
            }
        }
        // Nilpotency of the declared step.
        for i in 0..n {
            for j in 0..n {
                let b = &self.table[i * n + j];
                for k in 0..n {
                    let ek = DVector::from_fn(n, |r, _| if r == k { 1.0 } else { 0.0 });
                    let nested = self.bracket(&ek, b);
                    if self.step == 2 && nested.amax() > 1e-12 {
                        return Err(NilgeoError::InvalidSpec(format!(
                            "declared step 2 but [e_{k}, [e_{i}, e_{j}]] is nonzero"
                        )));
                    }
                    if self.step == 3 {
                        for l in 0..n {
                            let el = DVector::from_fn(n, |r, _| if r == l { 1.0 } else { 0.0 });
                            if self.bracket(&el, &nested).amax() > 1e-12 {
                                return Err(NilgeoError::InvalidSpec(format!(
                                    "declared step 3 but a 4-fold bracket ({l},{k},{i},{j}) is nonzero"
                                )));
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Stable content hash of the defining JSON, echoed into reports.
    pub fn hash(&self) -> u64 {
        self.hash
    }

    /// Lie bracket of two coordinate vectors.
    pub fn bracket(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.dim, "bracket: x dimension");
        assert_eq!(y.len(), self.dim, "bracket: y dimension");
        let mut out = DVector::zeros(self.dim);
        for i in 0..self.dim {
            if x[i] == 0.0 {
                continue;
            }
            for j in 0..self.dim {
                if y[j] == 0.0 {
                    continue;
                }
                out.axpy(x[i] * y[j], &self.table[i * self.dim + j], 1.0);
            }
        }
        out
    }

    /// Complexified bracket, same structure constants.
    pub fn bracket_complex(
        &self,
        x: &DVector<Complex<f64>>,
        y: &DVector<Complex<f64>>,
    ) -> DVector<Complex<f64>> {
        let mut out = DVector::from_element(self.dim, Complex::new(0.0, 0.0));
        for i in 0..self.dim {
            for j in 0..self.dim {
                let c = x[i] * y[j];
                if c.norm_sqr() == 0.0 {
                    continue;
                }
                let t = &self.table[i * self.dim + j];
                for k in 0..self.dim {
                    if t[k] != 0.0 {
                        out[k] += c * t[k];
                    }
                }
            }
        }
        out
    }

    /// Group product in exponential coordinates.
    ///
    /// Step 2: x*y = x + y + [x,y]/2. Step 3 appends the next
    /// Baker-Campbell-Hausdorff term ([x,[x,y]] - [y,[x,y]])/12, which is
    /// exact there.
    pub fn multiply(&self, p: &GroupPoint, q: &GroupPoint) -> GroupPoint {
        assert_eq!(p.len(), self.dim, "multiply: p dimension");
        assert_eq!(q.len(), self.dim, "multiply: q dimension");
        let b = self.bracket(p, q);
        let mut out = p + q + &b * 0.5;
        if self.step == 3 {
            out += (self.bracket(p, &b) - self.bracket(q, &b)) / 12.0;
        }
        out
    }

    /// Group inverse; -p for step 2 and 3 alike.
    pub fn inverse(&self, p: &GroupPoint) -> GroupPoint {
        -p
    }

    pub fn identity(&self) -> GroupPoint {
        DVector::zeros(self.dim)
    }

    /// Coordinates not in [g,g]; the fixed complement basis for the
    /// abelianization g / [g,g].
    pub fn complement_indices(&self) -> Vec<usize> {
        (0..self.dim)
            .filter(|k| !self.derived_indices.contains(k))
            .collect()
    }

    /// Projection to g / [g,g] in the complement basis.
    pub fn pi_ab(&self, p: &GroupPoint) -> DVector<f64> {
        let idx = self.complement_indices();
        DVector::from_fn(idx.len(), |r, _| p[idx[r]])
    }

    /// Anisotropic dilation by the grading weights; a group automorphism.
    pub fn dilation(&self, lambda: f64, p: &GroupPoint) -> GroupPoint {
        DVector::from_fn(self.dim, |k, _| lambda.powi(self.weights[k] as i32) * p[k])
    }
}

fn fnv64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// A bracket-generating left-invariant distribution with an inner product.
#[derive(Debug, Clone)]
pub struct SubRiemannianStructure {
    pub algebra: Arc<NilpotentAlgebraSpec>,
    /// dim x k matrix whose columns span the horizontal space at identity.
    pub horizontal: DMatrix<f64>,
    /// k x k symmetric positive definite metric in horizontal coordinates.
    pub metric: DMatrix<f64>,
    /// k x k change of coordinates: columns are metric-orthonormal, the
    /// first `v_dim` span V, the rest span the drift space (horizontal
    /// intersected with [g,g]).
    pub frame_coords: DMatrix<f64>,
    pub v_dim: usize,
    /// Homogeneous dimension dim V + 2 dim [g,g].
    pub q_hom: usize,
}

impl SubRiemannianStructure {
    pub fn new(
        algebra: Arc<NilpotentAlgebraSpec>,
        horizontal: DMatrix<f64>,
        metric: DMatrix<f64>,
    ) -> Result<Self> {
        let dim = algebra.dim;
        let k = horizontal.ncols();
        if horizontal.nrows() != dim {
            return Err(NilgeoError::DimensionMismatch(
                "horizontal basis rows != algebra dim".into(),
            ));
        }
        if metric.nrows() != k || metric.ncols() != k {
            return Err(NilgeoError::InvalidSpec("metric must be k x k".into()));
        }
        if (metric.clone() - metric.transpose()).amax() > 1e-12 {
            return Err(NilgeoError::InvalidSpec("metric is not symmetric".into()));
        }
        if metric.clone().cholesky().is_none() {
            return Err(NilgeoError::InvalidSpec(
                "metric is not positive definite".into(),
            ));
        }
        if linalg::rank(&horizontal, RANK_TOL) != k {
            return Err(NilgeoError::InvalidSpec(
                "horizontal basis columns are dependent".into(),
            ));
        }

        // Bracket generation: horizontal + [g,g] must span g.
        let m = algebra.derived_indices.len();
        let mut gen = DMatrix::zeros(dim, k + m);
        gen.view_mut((0, 0), (dim, k)).copy_from(&horizontal);
        for (c, &idx) in algebra.derived_indices.iter().enumerate() {
            gen[(idx, k + c)] = 1.0;
        }
        if linalg::rank(&gen, RANK_TOL) != dim {
            return Err(NilgeoError::InvalidSpec(
                "horizontal space plus [g,g] does not span the algebra".into(),
            ));
        }

        // Drift space: horizontal coordinate vectors c with H c inside [g,g],
        // i.e. the complement-row restriction of H annihilates c.
        let comp = algebra.complement_indices();
        let mut a = DMatrix::zeros(comp.len(), k);
        for (r, &row) in comp.iter().enumerate() {
            for c in 0..k {
                a[(r, c)] = horizontal[(row, c)];
            }
        }
        let drift = linalg::nullspace(&a, RANK_TOL);
        // V: metric-orthogonal complement of the drift space inside Delta.
        let v = if drift.ncols() == 0 {
            DMatrix::identity(k, k)
        } else {
            linalg::nullspace(&(drift.transpose() * &metric), RANK_TOL)
        };
        let v_on = linalg::gram_schmidt_metric(&v, &metric, 1e-12);
        let d_on = linalg::gram_schmidt_metric(&drift, &metric, 1e-12);
        let v_dim = v_on.ncols();
        let mut frame_coords = DMatrix::zeros(k, v_dim + d_on.ncols());
        frame_coords.view_mut((0, 0), (k, v_dim)).copy_from(&v_on);
        frame_coords
            .view_mut((0, v_dim), (k, d_on.ncols()))
            .copy_from(&d_on);
        if frame_coords.ncols() != k {
            return Err(NilgeoError::InvariantViolation(
                "orthogonal splitting of the horizontal space lost rank".into(),
            ));
        }

        // Homogeneous dimension of the asymptotic cone: sum of the grading
        // weights (v_dim + 2m for step 2).
        let q_hom = algebra.weights.iter().map(|&w| w as usize).sum();
        Ok(SubRiemannianStructure {
            algebra,
            horizontal,
            metric,
            frame_coords,
            v_dim,
            q_hom,
        })
    }

    /// Horizontal rank k.
    pub fn k(&self) -> usize {
        self.horizontal.ncols()
    }

    pub fn drift_dim(&self) -> usize {
        self.k() - self.v_dim
    }

    /// Carnot case: the horizontal space meets [g,g] trivially.
    pub fn is_carnot(&self) -> bool {
        self.drift_dim() == 0
    }

    /// Ambient algebra vector of a horizontal coordinate vector.
    pub fn to_ambient(&self, c: &DVector<f64>) -> DVector<f64> {
        &self.horizontal * c
    }

    /// Metric inner product of horizontal coordinate vectors.
    pub fn ip(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        (a.transpose() * &self.metric * b)[(0, 0)]
    }

    pub fn norm(&self, a: &DVector<f64>) -> f64 {
        self.ip(a, a).max(0.0).sqrt()
    }

    /// Metric-orthonormal frame of the horizontal space as ambient columns;
    /// first `v_dim` columns span V.
    pub fn frame_ambient(&self) -> DMatrix<f64> {
        &self.horizontal * &self.frame_coords
    }

    /// The structure whose horizontal space is V with the restricted metric.
    /// Induces the canonical asymptotic distance; idempotent.
    pub fn asymptotic_structure(&self) -> Result<SubRiemannianStructure> {
        // Loaded algebras are graded (weights validate at load time), so
        // the cone reuses the same bracket table with horizontal space V.
        let frame = self.frame_ambient();
        let v_cols: Vec<_> = (0..self.v_dim).map(|j| frame.column(j).clone_owned()).collect();
        SubRiemannianStructure::new(
            self.algebra.clone(),
            DMatrix::from_columns(&v_cols),
            DMatrix::identity(self.v_dim, self.v_dim),
        )
    }

    /// Gram matrix of the abelianization norm on the complement basis.
    /// xi maps to sqrt(xi^T G xi).
    pub fn abelianization_gram(&self) -> Result<DMatrix<f64>> {
        let comp = self.algebra.complement_indices();
        let k = self.k();
        let mut a = DMatrix::zeros(comp.len(), k);
        for (r, &row) in comp.iter().enumerate() {
            for c in 0..k {
                a[(r, c)] = self.horizontal[(row, c)];
            }
        }
        let metric_inv = linalg::inv_spd(&self.metric).ok_or_else(|| {
            NilgeoError::InvariantViolation("metric lost positive definiteness".into())
        })?;
        let m = &a * metric_inv * a.transpose();
        linalg::inv_spd(&m).ok_or_else(|| {
            NilgeoError::InvariantViolation(
                "horizontal space does not project onto the abelianization".into(),
            )
        })
    }

    /// Norm on g/[g,g] making the quotient projection a submetry:
    /// the minimal metric length of a horizontal vector projecting to xi.
    pub fn abelianization_norm(&self, xi: &DVector<f64>) -> Result<f64> {
        let g = self.abelianization_gram()?;
        if xi.len() != g.nrows() {
            return Err(NilgeoError::DimensionMismatch(
                "abelianization vector length".into(),
            ));
        }
        Ok((xi.transpose() * g * xi)[(0, 0)].max(0.0).sqrt())
    }
}

/// A linear map in exponential coordinates commuting with the bracket.
#[derive(Debug, Clone)]
pub struct Automorphism {
    pub matrix: DMatrix<f64>,
}

impl Automorphism {
    pub fn identity(dim: usize) -> Self {
        Automorphism {
            matrix: DMatrix::identity(dim, dim),
        }
    }

    pub fn apply(&self, p: &GroupPoint) -> GroupPoint {
        &self.matrix * p
    }

    /// Checks f[x,y] = [fx, fy] on all basis pairs.
    pub fn is_automorphism(&self, algebra: &NilpotentAlgebraSpec, tol: f64) -> bool {
        let n = algebra.dim;
        if self.matrix.determinant().abs() < 1e-14 {
            return false;
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let ei = DVector::from_fn(n, |r, _| if r == i { 1.0 } else { 0.0 });
                let ej = DVector::from_fn(n, |r, _| if r == j { 1.0 } else { 0.0 });
                let lhs = &self.matrix * algebra.bracket(&ei, &ej);
                let rhs = algebra.bracket(&(&self.matrix * ei), &(&self.matrix * ej));
                if (lhs - rhs).amax() > tol {
                    return false;
                }
            }
        }
        true
    }
}

/// Shear by a linear map L : g/[g,g] -> [g,g], acting as p -> p + L(pi_ab p).
///
/// `l` is (dim [g,g]) x (dim - dim [g,g]) in the complement / derived bases.
pub fn shear_automorphism(
    algebra: &NilpotentAlgebraSpec,
    l: &DMatrix<f64>,
) -> Result<Automorphism> {
    let comp = algebra.complement_indices();
    let der = &algebra.derived_indices;
    if l.nrows() != der.len() || l.ncols() != comp.len() {
        return Err(NilgeoError::DimensionMismatch(
            "shear map must be (dim [g,g]) x (dim g/[g,g])".into(),
        ));
    }
    let mut m = DMatrix::identity(algebra.dim, algebra.dim);
    for (r, &row) in der.iter().enumerate() {
        for (c, &col) in comp.iter().enumerate() {
            m[(row, col)] += l[(r, c)];
        }
    }
    let auto = Automorphism { matrix: m };
    if !auto.is_automorphism(algebra, 1e-12) {
        return Err(NilgeoError::InvalidSpec(
            "shear map does not commute with the bracket".into(),
        ));
    }
    Ok(auto)
}

/// The shear carrying one complemented horizontal space onto another with
/// identical abelianization norms; an isometry between the two structures.
pub fn graph_isometry(
    s1: &SubRiemannianStructure,
    s2: &SubRiemannianStructure,
) -> Result<Automorphism> {
    let alg = &s1.algebra;
    let same_algebra = alg.dim == s2.algebra.dim
        && alg.step == s2.algebra.step
        && alg
            .table
            .iter()
            .zip(s2.algebra.table.iter())
            .all(|(a, b)| (a - b).amax() < 1e-12);
    if !same_algebra {
        return Err(NilgeoError::DimensionMismatch(
            "structures live over different algebras".into(),
        ));
    }
    let comp = alg.complement_indices();
    let m = alg.derived_indices.len();
    for (name, s) in [("first", s1), ("second", s2)] {
        if s.k() != alg.dim - m || s.drift_dim() != 0 {
            return Err(NilgeoError::InvalidSpec(format!(
                "{name} horizontal space is not a complement of [g,g]"
            )));
        }
    }

    // Unique horizontal lift of each abelianization basis vector.
    let lift = |s: &SubRiemannianStructure| -> Result<DMatrix<f64>> {
        let k = s.k();
        let mut a = DMatrix::zeros(comp.len(), k);
        for (r, &row) in comp.iter().enumerate() {
            for c in 0..k {
                a[(r, c)] = s.horizontal[(row, c)];
            }
        }
        let a_inv = a.clone().try_inverse().ok_or_else(|| {
            NilgeoError::InvalidSpec("horizontal space does not project bijectively".into())
        })?;
        Ok(&s.horizontal * a_inv)
    };
    let h1 = lift(s1)?;
    let h2 = lift(s2)?;

    // Equal abelianization norms, checked on the Gram matrices of the lifts.
    let gram = |s: &SubRiemannianStructure, h: &DMatrix<f64>| -> DMatrix<f64> {
        // h = horizontal * c with c = A^{-1}; pull the metric back through c.
        let c = linalg::inv_spd(&(s.horizontal.transpose() * &s.horizontal))
            .map(|g| g * s.horizontal.transpose() * h)
            .expect("independent columns");
        c.transpose() * &s.metric * c
    };
    let g1 = gram(s1, &h1);
    let g2 = gram(s2, &h2);
    let scale = g1.amax().max(g2.amax());
    if (g1 - g2).amax() > NORM_EQ_TOL * scale {
        return Err(NilgeoError::NoIsometry(
            "abelianization norms differ beyond tolerance".into(),
        ));
    }

    // The difference of the lifts is vertical; it defines the shear.
    let diff = &h2 - &h1;
    let mut l = DMatrix::zeros(m, comp.len());
    for (r, &row) in alg.derived_indices.iter().enumerate() {
        for c in 0..comp.len() {
            l[(r, c)] = diff[(row, c)];
        }
    }
    for (row, _) in comp.iter().enumerate() {
        let idx = comp[row];
        if diff.row(idx).amax() > 1e-9 {
            return Err(NilgeoError::InvariantViolation(
                "lift difference is not vertical".into(),
            ));
        }
    }
    shear_automorphism(alg, &l)
}

/// Parses an algebra file into (algebra, structure).
pub fn load_structure_str(json: &str) -> Result<SubRiemannianStructure> {
    let file: AlgebraFile = serde_json::from_str(json)?;
    let alg = Arc::new(NilpotentAlgebraSpec::from_file_parts(&file)?);
    let dim = alg.dim;

    let horizontal = match &file.horizontal {
        serde_json::Value::Array(items) if items.iter().all(|v| v.is_u64()) => {
            let idx: Vec<usize> = items.iter().map(|v| v.as_u64().unwrap() as usize).collect();
            let mut h = DMatrix::zeros(dim, idx.len());
            for (c, &i) in idx.iter().enumerate() {
                if i >= dim {
                    return Err(NilgeoError::InvalidSpec(format!(
                        "horizontal index {i} out of range"
                    )));
                }
                h[(i, c)] = 1.0;
            }
            h
        }
        serde_json::Value::Array(items) if items.iter().all(|v| v.is_array()) => {
            let cols: Vec<Vec<f64>> = items
                .iter()
                .map(|v| {
                    v.as_array()
                        .unwrap()
                        .iter()
                        .map(|x| x.as_f64().unwrap_or(f64::NAN))
                        .collect()
                })
                .collect();
            if cols.iter().any(|c| c.len() != dim || c.iter().any(|x| !x.is_finite())) {
                return Err(NilgeoError::InvalidSpec(
                    "horizontal vectors must be finite and of length dim".into(),
                ));
            }
            let mut h = DMatrix::zeros(dim, cols.len());
            for (c, col) in cols.iter().enumerate() {
                for (r, &x) in col.iter().enumerate() {
                    h[(r, c)] = x;
                }
            }
            h
        }
        _ => {
            return Err(NilgeoError::InvalidSpec(
                "horizontal must be a list of indices or of vectors".into(),
            ))
        }
    };

    let k = horizontal.ncols();
    if file.metric.len() != k * k {
        return Err(NilgeoError::InvalidSpec(format!(
            "metric has {} entries, expected {}",
            file.metric.len(),
            k * k
        )));
    }
    let metric = DMatrix::from_row_slice(k, k, &file.metric);
    SubRiemannianStructure::new(alg, horizontal, metric)
}

pub fn load_structure_path(path: &std::path::Path) -> Result<SubRiemannianStructure> {
    let json = std::fs::read_to_string(path)?;
    load_structure_str(&json)
}

/// Algebra files shipped with the crate.
pub fn bundled_spec(name: &str) -> Option<&'static str> {
    match name {
        "heisenberg" => Some(include_str!("../specs/heisenberg.json")),
        "heisenberg_riemannian" => Some(include_str!("../specs/heisenberg_riemannian.json")),
        "hxr_riemannian" => Some(include_str!("../specs/hxr_riemannian.json")),
        "free23" => Some(include_str!("../specs/free23.json")),
        "engel_riemannian" => Some(include_str!("../specs/engel_riemannian.json")),
        _ => None,
    }
}

pub fn bundled_names() -> &'static [&'static str] {
    &[
        "heisenberg",
        "heisenberg_riemannian",
        "hxr_riemannian",
        "free23",
        "engel_riemannian",
    ]
}

pub fn load_bundled(name: &str) -> Result<SubRiemannianStructure> {
    let json = bundled_spec(name)
        .ok_or_else(|| NilgeoError::InvalidSpec(format!("no bundled spec named '{name}'")))?;
    load_structure_str(json)
}
