//! Small dense linear algebra for coupling controls.
//!
//! Everything here works on `nalgebra` dynamic matrices; the dimensions
//! involved are tiny (n ≤ 16) so no attempt is made at blocking or sparsity.
//! The objects are the unit direction `ν` of the separation `X = A − B`,
//! the unit Hilbert–Schmidt skew matrix `Z` of the areal difference, and
//! the coupling control `J` with its symmetric/skew split.

use nalgebra::{DMatrix, DVector};

use crate::error::{CouplingError, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Tolerance on `λ_max(JᵀJ) ≤ 1` used when realizing controls.
pub const CONTROL_TOLERANCE: f64 = 1e-10;

const UNIT_TOLERANCE: f64 = 1e-12;
const PSD_REJECT: f64 = 1e-6;

/// A vector of Euclidean length one.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector(Vector);

impl UnitVector {
    /// Normalizes `v`; fails on the zero vector.
    pub fn new(v: Vector) -> Result<Self> {
        let norm = v.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(CouplingError::ZeroVector);
        }
        Ok(UnitVector(v / norm))
    }

    /// The `i`-th standard basis vector of `R^n`.
    pub fn basis(n: usize, i: usize) -> Self {
        let mut v = Vector::zeros(n);
        v[i] = 1.0;
        UnitVector(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_vector(&self) -> &Vector {
        &self.0
    }

    /// The rank-one projector `ννᵀ`.
    pub fn projector(&self) -> Matrix {
        &self.0 * self.0.transpose()
    }
}

/// A skew-symmetric matrix with `trace(ZᵀZ) = 1`.
///
/// Entries below the diagonal are stored as exact negatives of the entries
/// above it, so `Z + Zᵀ` is identically zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewUnitMatrix(Matrix);

impl SkewUnitMatrix {
    /// Scales a skew matrix to unit Hilbert–Schmidt norm.
    pub fn from_skew(m: &Matrix) -> Result<Self> {
        match normalize_area(m)? {
            AreaNorm::Scaled { z, .. } => Ok(z),
            AreaNorm::Degenerate => Err(CouplingError::Degenerate("zero skew matrix")),
        }
    }

    /// The planar generator with `Z₁₂ = 1/√2`.
    pub fn planar() -> Self {
        let c = std::f64::consts::FRAC_1_SQRT_2;
        SkewUnitMatrix(Matrix::from_row_slice(2, 2, &[0.0, c, -c, 0.0]))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    /// `−Z`, which is again skew with unit norm.
    pub fn negated(&self) -> Self {
        SkewUnitMatrix(-&self.0)
    }

    /// `ZᵀZ`, positive semidefinite with eigenvalues in `[0, 1/2]`.
    pub fn gram(&self) -> Matrix {
        self.0.transpose() * &self.0
    }
}

/// A square control matrix `J` together with `S = (J + Jᵀ)/2` and
/// `A = (J − Jᵀ)/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlMatrix {
    j: Matrix,
    s: Matrix,
    a: Matrix,
}

impl ControlMatrix {
    pub fn identity(n: usize) -> Self {
        ControlMatrix {
            j: Matrix::identity(n, n),
            s: Matrix::identity(n, n),
            a: Matrix::zeros(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.j.nrows()
    }

    pub fn j(&self) -> &Matrix {
        &self.j
    }

    pub fn symmetric(&self) -> &Matrix {
        &self.s
    }

    pub fn skew(&self) -> &Matrix {
        &self.a
    }

    pub fn into_matrix(self) -> Matrix {
        self.j
    }
}

/// Splits `J` into symmetric and skew parts.
pub fn decompose_control(j: Matrix) -> Result<ControlMatrix> {
    if !j.is_square() {
        return Err(CouplingError::NotSquare {
            rows: j.nrows(),
            cols: j.ncols(),
        });
    }
    let n = j.nrows();
    let mut s = Matrix::zeros(n, n);
    let mut a = Matrix::zeros(n, n);
    for r in 0..n {
        s[(r, r)] = j[(r, r)];
        for c in (r + 1)..n {
            let sym = 0.5 * (j[(r, c)] + j[(c, r)]);
            let skew = 0.5 * (j[(r, c)] - j[(c, r)]);
            s[(r, c)] = sym;
            s[(c, r)] = sym;
            a[(r, c)] = skew;
            a[(c, r)] = -skew;
        }
    }
    Ok(ControlMatrix { j, s, a })
}

/// Eigenvalues (ascending) and eigenvectors of a symmetric matrix.
pub fn symmetric_eigen(m: &Matrix) -> Result<(Vector, Matrix)> {
    if !m.is_square() {
        return Err(CouplingError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    let sym = symmetrize(m);
    let eig = sym
        .try_symmetric_eigen(f64::EPSILON, 10_000)
        .ok_or(CouplingError::EigenSolve)?;
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(CouplingError::EigenSolve);
    }
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]));
    let values = Vector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = Matrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        vectors.set_column(col, &eig.eigenvectors.column(i));
    }
    Ok((values, vectors))
}

/// Largest eigenvalue of `JᵀJ`.
pub fn max_gram_eigenvalue(control: &ControlMatrix) -> Result<f64> {
    let gram = control.j.transpose() * &control.j;
    let (values, _) = symmetric_eigen(&gram)?;
    Ok(values[values.len() - 1])
}

/// True iff every eigenvalue of `JᵀJ` is at most `1 + tol`.
pub fn validate_control(control: &ControlMatrix, tol: f64) -> Result<bool> {
    if !(tol >= 0.0) {
        return Err(CouplingError::OutOfRange {
            name: "tol",
            value: tol,
            constraint: "tol >= 0",
        });
    }
    Ok(max_gram_eigenvalue(control)? <= 1.0 + tol)
}

/// Result of splitting an areal-difference matrix into size and direction.
#[derive(Debug, Clone, PartialEq)]
pub enum AreaNorm {
    /// The matrix is exactly zero; no direction exists.
    Degenerate,
    /// `area = u · z` with `u > 0`.
    Scaled { u: f64, z: SkewUnitMatrix },
}

/// Writes a skew matrix as `U·Z` with `U` its Frobenius norm.
pub fn normalize_area(area: &Matrix) -> Result<AreaNorm> {
    if !area.is_square() {
        return Err(CouplingError::NotSquare {
            rows: area.nrows(),
            cols: area.ncols(),
        });
    }
    let n = area.nrows();
    let scale = area.amax();
    for r in 0..n {
        for c in r..n {
            if (area[(r, c)] + area[(c, r)]).abs() > UNIT_TOLERANCE * scale.max(f64::MIN_POSITIVE) {
                return Err(CouplingError::Invariant(format!(
                    "area matrix is not skew at ({r}, {c})"
                )));
            }
        }
    }
    let u = area.norm();
    if u == 0.0 {
        return Ok(AreaNorm::Degenerate);
    }
    if !u.is_finite() {
        return Err(CouplingError::Numeric("non-finite areal difference".into()));
    }
    let mut z = Matrix::zeros(n, n);
    for r in 0..n {
        for c in (r + 1)..n {
            let v = area[(r, c)] / u;
            z[(r, c)] = v;
            z[(c, r)] = -v;
        }
    }
    Ok(AreaNorm::Scaled {
        u,
        z: SkewUnitMatrix(z),
    })
}

/// `exp(−√2 θ Z) = cos θ · I − √2 sin θ · Z` for a planar unit skew `Z`.
pub fn planar_rotation(z: &SkewUnitMatrix, theta: f64) -> Result<Matrix> {
    if z.dim() != 2 {
        return Err(CouplingError::Dimension {
            expected: "2x2".into(),
            found: format!("{}x{}", z.dim(), z.dim()),
        });
    }
    let zz = z.as_matrix() * z.as_matrix();
    let target = Matrix::identity(2, 2) * -0.5;
    if (&zz - &target).amax() > UNIT_TOLERANCE {
        return Err(CouplingError::Invariant("Z·Z differs from −I/2".into()));
    }
    let (sin, cos) = theta.sin_cos();
    Ok(Matrix::identity(2, 2) * cos - z.as_matrix() * (std::f64::consts::SQRT_2 * sin))
}

/// Symmetric square root of a positive semidefinite matrix.
///
/// Eigenvalues in `[−1e-6, 0)` are treated as round-off and clamped to zero;
/// anything more negative is rejected.
pub fn principal_sqrt_psd(m: &Matrix) -> Result<Matrix> {
    sqrt_psd_with_floor(m, 0.0)
}

/// As [`principal_sqrt_psd`], but eigenvalues at or below `floor` are set to
/// zero before the root is taken.
///
/// `√λ` magnifies round-off near zero: an eigenvalue of `1e-16` that should
/// be exactly zero would otherwise contribute a root of `1e-8`.
pub fn sqrt_psd_with_floor(m: &Matrix, floor: f64) -> Result<Matrix> {
    let (values, vectors) = symmetric_eigen(m)?;
    let min = values[0];
    if min < -PSD_REJECT {
        return Err(CouplingError::NotPsd { min_eigenvalue: min });
    }
    let n = values.len();
    let roots = Vector::from_iterator(n, values.iter().map(|&v| if v <= floor { 0.0 } else { v.sqrt() }));
    let scaled = &vectors * Matrix::from_diagonal(&roots);
    Ok(symmetrize(&(scaled * vectors.transpose())))
}

/// `(M + Mᵀ)/2`.
pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Returns `true` when `m` is skew (`m + mᵀ = 0`) exactly.
pub fn is_exactly_skew(m: &Matrix) -> bool {
    let n = m.nrows();
    m.is_square() && (0..n).all(|r| (r..n).all(|c| m[(r, c)] == -m[(c, r)]))
}
