//! Sparse ternary coding.
//!
//! A signature `x ∈ ℝ^d` is projected by a row-orthonormal matrix `W`
//! (ℓ × d) and each component of `Wx` is quantized to `{−1, 0, +1}`: values
//! strictly above `λ` give `+1`, values strictly below `−λ` give `−1`, the
//! rest give `0`. For Gaussian signatures with per-component deviation σx the
//! expected fraction of non-zero symbols is `2Φ(−λ/σx)`.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{domain_err, shape_err, Error, Result};
use crate::exec::Exec;
use crate::normal;
use crate::rng::{fill_gaussian, substream};

/// Row-orthonormal random projection.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformMatrix {
    matrix: DMatrix<f64>,
    seed: u64,
}

impl TransformMatrix {
    /// Code length ℓ.
    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    /// Signature dimension d.
    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_square(&self) -> bool {
        self.rows() == self.cols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// `W x`.
    pub fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.cols() {
            return Err(shape_err(format!(
                "vector of dimension {} against transform with {} columns",
                x.len(),
                self.cols()
            )));
        }
        Ok(&self.matrix * x)
    }

    /// `W X` for every column of `X`, computed in column blocks.
    pub fn project_columns(&self, x: &DMatrix<f64>, exec: Exec) -> Result<DMatrix<f64>> {
        if x.nrows() != self.cols() {
            return Err(shape_err(format!(
                "matrix with {} rows against transform with {} columns",
                x.nrows(),
                self.cols()
            )));
        }
        const BLOCK: usize = 128;
        let n = x.ncols();
        let blocks = n.div_ceil(BLOCK);
        let parts = exec.map(blocks, |b| {
            let start = b * BLOCK;
            let width = BLOCK.min(n - start);
            &self.matrix * x.columns(start, width)
        });
        let mut out = DMatrix::zeros(self.rows(), n);
        for (b, part) in parts.into_iter().enumerate() {
            out.columns_mut(b * BLOCK, part.ncols()).copy_from(&part);
        }
        Ok(out)
    }

    /// `Wᵀ z`.
    pub fn back_project(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        if z.len() != self.rows() {
            return Err(shape_err(format!(
                "vector of length {} against transform with {} rows",
                z.len(),
                self.rows()
            )));
        }
        Ok(self.matrix.tr_mul(z))
    }
}

/// Builds an ℓ × d row-orthonormal matrix from a seeded Gaussian matrix.
///
/// A d × ℓ standard Gaussian matrix is QR-factorized, the columns of Q are
/// sign-normalized so that R has a positive diagonal, and W = Qᵀ.
pub fn make_transform(d: usize, l: usize, seed: u64) -> Result<TransformMatrix> {
    if l == 0 || l > d {
        return Err(shape_err(format!(
            "code length {l} must satisfy 1 <= l <= d = {d}"
        )));
    }
    let mut rng = substream(seed, &[0x7472_616e_7366_6f72, d as u64, l as u64]);
    let mut data = vec![0.0; d * l];
    fill_gaussian(&mut rng, 1.0, &mut data);
    let gaussian = DMatrix::from_vec(d, l, data);
    let qr = gaussian.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..l {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(TransformMatrix {
        matrix: q.transpose(),
        seed,
    })
}

/// A code over `{−1, 0, +1}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TernaryCode(Vec<i8>);

const CODE_MAGIC: [u8; 4] = *b"TRNC";
const CODE_VERSION: u32 = 1;
pub const CODE_HEADER_LEN: usize = 16;

impl TernaryCode {
    pub fn new(symbols: Vec<i8>) -> Result<Self> {
        if let Some(bad) = symbols.iter().find(|s| !(-1..=1).contains(*s)) {
            return Err(domain_err(format!("symbol {bad} is not in {{-1, 0, 1}}")));
        }
        Ok(TernaryCode(symbols))
    }

    pub fn zeros(len: usize) -> Self {
        TernaryCode(vec![0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn symbols(&self) -> &[i8] {
        &self.0
    }

    pub fn non_zero_count(&self) -> usize {
        self.0.iter().filter(|&&s| s != 0).count()
    }

    /// Symbol-wise negation.
    pub fn negated(&self) -> Self {
        TernaryCode(self.0.iter().map(|s| -s).collect())
    }

    /// Wire format: 4-byte magic, version as u32 LE, ℓ as u64 LE, then one
    /// byte per symbol (`0xFF`, `0x00`, `0x01`).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(CODE_HEADER_LEN + self.len());
        out.extend_from_slice(&CODE_MAGIC);
        out.extend_from_slice(&CODE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend(self.0.iter().map(|&s| s as u8));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let code =
            Self::read_from(&mut cursor)?.ok_or_else(|| Error::Parse("empty input".into()))?;
        if !cursor.is_empty() {
            return Err(Error::Parse(format!("{} trailing bytes", cursor.len())));
        }
        Ok(code)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    /// Reads one framed code; `Ok(None)` on a clean end of stream.
    pub fn read_from<R: Read>(r: &mut R) -> Result<Option<Self>> {
        let mut header = [0u8; CODE_HEADER_LEN];
        let mut filled = 0;
        while filled < CODE_HEADER_LEN {
            let n = r.read(&mut header[filled..])?;
            if n == 0 {
                break;
            }
            filled += n;
        }
        if filled == 0 {
            return Ok(None);
        }
        if filled < CODE_HEADER_LEN {
            return Err(Error::Parse("truncated code header".into()));
        }
        if header[..4] != CODE_MAGIC {
            return Err(Error::Parse("bad code magic".into()));
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != CODE_VERSION {
            return Err(Error::Parse(format!("unsupported code version {version}")));
        }
        let len = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
        let mut body = vec![0u8; len];
        r.read_exact(&mut body)
            .map_err(|_| Error::Parse("truncated code body".into()))?;
        let symbols = body
            .into_iter()
            .map(|b| match b {
                0xFF => Ok(-1),
                0x00 => Ok(0),
                0x01 => Ok(1),
                other => Err(Error::Parse(format!("invalid symbol byte {other:#04x}"))),
            })
            .collect::<Result<Vec<i8>>>()?;
        Ok(Some(TernaryCode(symbols)))
    }
}

/// Threshold parameters of the embedding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingParams {
    pub lambda: f64,
    pub sigma_x: f64,
    pub target_sparsity: f64,
}

impl EmbeddingParams {
    pub fn from_lambda(lambda: f64, sigma_x: f64) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(domain_err(format!("lambda {lambda} must be >= 0")));
        }
        Ok(EmbeddingParams {
            lambda,
            sigma_x,
            target_sparsity: expected_sparsity(lambda, sigma_x)?,
        })
    }

    pub fn from_sparsity(s_frac: f64, sigma_x: f64) -> Result<Self> {
        if !(sigma_x > 0.0) {
            return Err(domain_err(format!("sigma_x {sigma_x} must be > 0")));
        }
        Ok(EmbeddingParams {
            lambda: lambda_from_sparsity(s_frac, sigma_x)?,
            sigma_x,
            target_sparsity: s_frac,
        })
    }
}

/// Expected non-zero fraction `2Φ(−λ/σx)`.
pub fn expected_sparsity(lambda: f64, sigma_x: f64) -> Result<f64> {
    if !(sigma_x > 0.0) {
        return Err(domain_err(format!("sigma_x {sigma_x} must be > 0")));
    }
    if !(lambda >= 0.0) {
        return Err(domain_err(format!("lambda {lambda} must be >= 0")));
    }
    Ok(2.0 * normal::cdf(-lambda / sigma_x))
}

/// Inverse of [`expected_sparsity`]: `λ = −σx Φ⁻¹(s/2)`.
pub fn lambda_from_sparsity(s_frac: f64, sigma_x: f64) -> Result<f64> {
    if !(s_frac > 0.0 && s_frac <= 1.0) {
        return Err(domain_err(format!("sparsity {s_frac} must lie in (0, 1]")));
    }
    if !(sigma_x > 0.0) {
        return Err(domain_err(format!("sigma_x {sigma_x} must be > 0")));
    }
    // Φ⁻¹(0.5) can come back as -0.0.
    Ok((-sigma_x * normal::quantile(s_frac / 2.0)).max(0.0))
}

/// Quantizes already-projected components.
pub fn threshold(projected: &[f64], lambda: f64) -> TernaryCode {
    TernaryCode(
        projected
            .iter()
            .map(|&z| {
                if z > lambda {
                    1
                } else if z < -lambda {
                    -1
                } else {
                    0
                }
            })
            .collect(),
    )
}

/// `h(x)`: project by `W` then quantize at `λ`.
pub fn embed(x: &DVector<f64>, w: &TransformMatrix, lambda: f64) -> Result<TernaryCode> {
    let z = w.project(x)?;
    Ok(threshold(z.as_slice(), lambda))
}

/// Embeds every column of `x`.
pub fn embed_columns(
    x: &DMatrix<f64>,
    w: &TransformMatrix,
    lambda: f64,
    exec: Exec,
) -> Result<Vec<TernaryCode>> {
    let z = w.project_columns(x, exec)?;
    Ok(threshold_columns(&z, lambda, exec))
}

/// Quantizes every column of an already-projected matrix.
pub fn threshold_columns(z: &DMatrix<f64>, lambda: f64, exec: Exec) -> Vec<TernaryCode> {
    exec.map(z.ncols(), |j| threshold(z.column(j).as_slice(), lambda))
}
