//! Small dense linear-algebra helpers shared by the solvers.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Eigen-decomposition of a Hermitian matrix with eigenvalues sorted ascending.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    /// Columns are eigenvectors, in the order of `values`.
    pub vectors: CMatrix,
}

pub fn hermitian_eigen(h: &CMatrix) -> Result<HermitianEigen> {
    if h.nrows() != h.ncols() {
        return Err(Error::Contract(format!("matrix is {}x{}", h.nrows(), h.ncols())));
    }
    let n = h.nrows();
    if n == 0 {
        return Ok(HermitianEigen {
            values: vec![],
            vectors: CMatrix::zeros(0, 0),
        });
    }
    let scale = h.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if h.iter().all(|z| z.im.abs() <= 1e-15 * scale) {
        let (values, vectors) = symmetric_eigen(&h.map(|z| z.re))?;
        return Ok(HermitianEigen {
            values,
            vectors: vectors.map(|x| Complex64::new(x, 0.0)),
        });
    }
    let eig = nalgebra::SymmetricEigen::try_new(h.clone(), 1e-15, 10_000)
        .ok_or_else(|| Error::Solver(format!("Hermitian eigen-solve of size {n} did not converge")))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(HermitianEigen { values, vectors })
}

/// Real symmetric eigen-decomposition, eigenvalues ascending.
pub fn symmetric_eigen(h: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = h.nrows();
    let eig = nalgebra::SymmetricEigen::try_new(h.clone(), 1e-15, 10_000)
        .ok_or_else(|| Error::Solver(format!("symmetric eigen-solve of size {n} did not converge")))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((values, vectors))
}

impl HermitianEigen {
    /// `exp(−2πi·H·t)` for `H` in Hz and `t` in seconds.
    pub fn propagator(&self, t: f64) -> CMatrix {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for (c, &e) in self.values.iter().enumerate() {
            let ph = Complex64::from_polar(1.0, -TAU * e * t);
            for r in 0..n {
                scaled[(r, c)] *= ph;
            }
        }
        scaled * self.vectors.adjoint()
    }

    /// `exp(−2πi·H·t)·ψ` without forming the full propagator.
    pub fn apply(&self, psi: &CVector, t: f64) -> CVector {
        let mut c = self.vectors.adjoint() * psi;
        for (i, &e) in self.values.iter().enumerate() {
            c[i] *= Complex64::from_polar(1.0, -TAU * e * t);
        }
        &self.vectors * c
    }
}

/// Largest deviation from Hermiticity, relative to the largest entry.
pub fn hermiticity_defect(h: &CMatrix) -> f64 {
    let scale = h.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut worst = 0.0f64;
    for r in 0..h.nrows() {
        for c in r..h.ncols() {
            worst = worst.max((h[(r, c)] - h[(c, r)].conj()).norm());
        }
    }
    worst / scale
}

/// `exp(M)` for a real square matrix by scaling and squaring with a
/// degree-13 Taylor series.
pub fn expm_real(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let norm = m.row_iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
    let squarings = if norm > 0.25 { (norm / 0.25).log2().ceil() as i32 } else { 0 };
    let a = m / 2f64.powi(squarings);
    let mut result = DMatrix::<f64>::identity(n, n);
    let mut term = DMatrix::<f64>::identity(n, n);
    for k in 1..=18 {
        term = &term * &a / k as f64;
        result += &term;
        if term.amax() < 1e-18 * result.amax() {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// Solve `A x = 0` subject to `Σ x = 1` for a generator whose columns sum to zero.
pub fn stationary_vector(a: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = a.nrows();
    let mut m = a.clone();
    let mut rhs = DVector::<f64>::zeros(n);
    for c in 0..n {
        m[(n - 1, c)] = 1.0;
    }
    rhs[n - 1] = 1.0;
    m.lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Solver("singular generator: no unique stationary state".into()))
}
