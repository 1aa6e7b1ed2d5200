use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{matern_cov, Grid2D, MaternParams};
use crate::error::{arg_err, BasmuError, Result};

const MAGIC: &[u8; 4] = b"KBAS";

/// Truncated Mercer eigensystem of a kernel on a grid.
///
/// Columns of `psi` are eigenfunctions evaluated at the grid points and are
/// orthonormal under the cell-measure weighting: `Σ_j ψ_l(s_j) ψ_l'(s_j) / p = 1{l=l'}`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBasis {
    eigenvalues: DVector<f64>,
    psi: DMatrix<f64>,
}

impl KernelBasis {
    /// Build from raw parts, checking shapes and eigenvalue ordering.
    pub fn from_parts(eigenvalues: DVector<f64>, psi: DMatrix<f64>) -> Result<Self> {
        if psi.ncols() != eigenvalues.len() {
            return arg_err(format!(
                "psi has {} columns but {} eigenvalues were given",
                psi.ncols(),
                eigenvalues.len()
            ));
        }
        if psi.nrows() == 0 || eigenvalues.is_empty() {
            return arg_err("empty basis");
        }
        if eigenvalues.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return arg_err("eigenvalues must be finite and strictly positive");
        }
        if eigenvalues.as_slice().windows(2).any(|w| w[1] > w[0]) {
            return arg_err("eigenvalues must be sorted non-increasing");
        }
        Ok(Self { eigenvalues, psi })
    }

    pub fn p(&self) -> usize {
        self.psi.nrows()
    }

    /// Number of retained eigenpairs L.
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn cell_measure(&self) -> f64 {
        1.0 / self.p() as f64
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// p × L matrix of eigenfunction values.
    pub fn psi(&self) -> &DMatrix<f64> {
        &self.psi
    }

    /// θ_l = Σ_j f(s_j) ψ_l(s_j) λ(Δs_j).
    pub fn to_coeffs(&self, field: &DVector<f64>) -> Result<DVector<f64>> {
        if field.len() != self.p() {
            return arg_err(format!(
                "field has length {} but the basis has p = {}",
                field.len(),
                self.p()
            ));
        }
        Ok(self.psi.tr_mul(field) * self.cell_measure())
    }

    /// f(s_j) = Σ_l θ_l ψ_l(s_j).
    pub fn from_coeffs(&self, coeffs: &DVector<f64>) -> Result<DVector<f64>> {
        if coeffs.len() != self.len() {
            return arg_err(format!(
                "coefficient vector has length {} but the basis has L = {}",
                coeffs.len(),
                self.len()
            ));
        }
        Ok(&self.psi * coeffs)
    }

    /// Row-wise `to_coeffs`: an n × p matrix of fields becomes n × L.
    pub fn rows_to_coeffs(&self, fields: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if fields.ncols() != self.p() {
            return arg_err(format!(
                "field matrix has {} columns but the basis has p = {}",
                fields.ncols(),
                self.p()
            ));
        }
        Ok(fields * &self.psi * self.cell_measure())
    }

    /// Row-wise `from_coeffs`: n × L coefficients become n × p fields.
    pub fn rows_from_coeffs(&self, coeffs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if coeffs.ncols() != self.len() {
            return arg_err(format!(
                "coefficient matrix has {} columns but the basis has L = {}",
                coeffs.ncols(),
                self.len()
            ));
        }
        Ok(coeffs * self.psi.transpose())
    }

    /// Projection of a field onto the span of the basis.
    pub fn project(&self, field: &DVector<f64>) -> Result<DVector<f64>> {
        self.from_coeffs(&self.to_coeffs(field)?)
    }

    /// Largest deviation of ΨᵀΨ/p from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = self.psi.tr_mul(&self.psi) * self.cell_measure();
        let l = self.len();
        (&gram - DMatrix::<f64>::identity(l, l)).amax()
    }

    /// ‖K − Ψ diag(λ) Ψᵀ‖_F.
    pub fn reconstruction_error(&self, kernel: &DMatrix<f64>) -> f64 {
        let scaled = DMatrix::from_fn(self.p(), self.len(), |j, l| {
            self.psi[(j, l)] * self.eigenvalues[l]
        });
        (kernel - scaled * self.psi.transpose()).norm()
    }

    /// Copy keeping the leading `l` eigenpairs.
    pub fn truncate(&self, l: usize) -> Result<Self> {
        if l == 0 || l > self.len() {
            return arg_err(format!("cannot truncate a basis of {} to {l}", self.len()));
        }
        Ok(Self {
            eigenvalues: self.eigenvalues.rows(0, l).into_owned(),
            psi: self.psi.columns(0, l).into_owned(),
        })
    }

    /// Binary layout: "KBAS", u32 p, u32 L, u32 reserved (all LE), then λ as
    /// L f64 and Ψ column-major as p·L f64, little-endian.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.p() as u32).to_le_bytes())?;
        w.write_all(&(self.len() as u32).to_le_bytes())?;
        w.write_all(&0u32.to_le_bytes())?;
        for v in self.eigenvalues.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        // nalgebra storage is column-major
        for v in self.psi.as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)?;
        if &header[0..4] != MAGIC {
            return Err(BasmuError::Format("missing KBAS magic".into()));
        }
        let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap()) as usize;
        let (p, l) = (word(4), word(8));
        let mut read_f64s = |count: usize| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; count * 8];
            r.read_exact(&mut buf)?;
            Ok(buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };
        let lambda = read_f64s(l)?;
        let psi = read_f64s(p * l)?;
        Self::from_parts(
            DVector::from_vec(lambda),
            DMatrix::from_vec(p, l, psi),
        )
        .map_err(|e| BasmuError::Format(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

/// Dense p × p kernel matrix K[j, j'] = C_τ(‖s_j − s_j'‖/ρ).
pub fn kernel_matrix(grid: &Grid2D, params: &MaternParams) -> Result<DMatrix<f64>> {
    // distance only depends on the row/column offsets
    let (n1, n2) = (grid.n1, grid.n2);
    let mut table = vec![0.0; n1 * n2];
    for dr in 0..n1 {
        for dc in 0..n2 {
            let dy = dr as f64 / n1 as f64;
            let dx = dc as f64 / n2 as f64;
            table[dr * n2 + dc] = matern_cov((dx * dx + dy * dy).sqrt(), params)?;
        }
    }
    let p = grid.p();
    Ok(DMatrix::from_fn(p, p, |a, b| {
        let (ra, ca) = grid.cell(a);
        let (rb, cb) = grid.cell(b);
        table[ra.abs_diff(rb) * n2 + ca.abs_diff(cb)]
    }))
}

/// Top-`l` eigenpairs of the measure-weighted kernel operator on `grid`.
pub fn eigenbasis(grid: &Grid2D, params: &MaternParams, l: usize) -> Result<KernelBasis> {
    let p = grid.p();
    if l == 0 || l > p {
        return arg_err(format!("truncation L = {l} must lie in 1..={p}"));
    }
    let k = kernel_matrix(grid, params)?;
    basis_from_kernel(&k, l)
}

pub(crate) fn basis_from_kernel(k: &DMatrix<f64>, l: usize) -> Result<KernelBasis> {
    let p = k.nrows();
    let norm = k.norm();
    let eig = SymmetricEigen::new(k.clone());
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let smallest = eig.eigenvalues[order[p - 1]];
    if smallest < -1e-8 * norm {
        return Err(BasmuError::Kernel(format!(
            "kernel matrix is not PSD: eigenvalue {smallest:.3e} below -1e-8·‖K‖"
        )));
    }
    let measure = 1.0 / p as f64;
    let lambda_max = eig.eigenvalues[order[0]] * measure;
    let floor = 1e-12 * lambda_max;
    let scale = (p as f64).sqrt();

    let mut eigenvalues = DVector::zeros(l);
    let mut psi = DMatrix::zeros(p, l);
    for (col, &idx) in order.iter().take(l).enumerate() {
        eigenvalues[col] = (eig.eigenvalues[idx] * measure).max(floor);
        let v = eig.eigenvectors.column(idx);
        let lead = v.iter().copied().find(|x| x.abs() > 1e-12).unwrap_or(1.0);
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        psi.set_column(col, &(v * (sign * scale)));
    }
    KernelBasis::from_parts(eigenvalues, psi)
}
