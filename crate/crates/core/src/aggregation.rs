//! Group aggregation.
//!
//! Four schemes turn a set of signatures into one ternary representative:
//!
//! | scheme          | order            | aggregation                    |
//! |-----------------|------------------|--------------------------------|
//! | `HoaSum`        | aggregate, embed | `G 1_N`                        |
//! | `HoaPinv`       | aggregate, embed | `(G†)ᵀ 1_N`                    |
//! | `AohSignSum`    | embed, aggregate | symbol-wise sign of the sum    |
//! | `AohMajority`   | embed, aggregate | symbol-wise mode               |

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::embedding::{embed, lambda_from_sparsity, TernaryCode, TransformMatrix};
use crate::error::{domain_err, shape_err, Error, Result};

/// Enrolled signatures as the columns of a d × N matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SignatureSet {
    matrix: DMatrix<f64>,
}

impl SignatureSet {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.ncols() == 0 {
            return Err(Error::EmptyGroup);
        }
        if matrix.nrows() == 0 {
            return Err(shape_err("signatures must have dimension >= 1"));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(domain_err("signature entries must be finite"));
        }
        Ok(SignatureSet { matrix })
    }

    pub fn from_columns(columns: &[DVector<f64>]) -> Result<Self> {
        let Some(first) = columns.first() else {
            return Err(Error::EmptyGroup);
        };
        if columns.iter().any(|c| c.len() != first.len()) {
            return Err(shape_err("signatures have mixed dimensions"));
        }
        Self::new(DMatrix::from_columns(columns))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn count(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn column(&self, j: usize) -> DVector<f64> {
        self.matrix.column(j).into_owned()
    }

    /// Group mean `m = N⁻¹ G 1_N`.
    pub fn mean(&self) -> DVector<f64> {
        self.matrix.column_sum() / self.count() as f64
    }

    /// The signatures at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyGroup);
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.count()) {
            return Err(shape_err(format!("index {bad} out of {}", self.count())));
        }
        Ok(SignatureSet {
            matrix: self.matrix.select_columns(indices),
        })
    }

    /// Every column scaled to unit Euclidean norm (zero columns are kept).
    pub fn normalized(&self) -> Self {
        let mut matrix = self.matrix.clone();
        for mut col in matrix.column_iter_mut() {
            let n = col.norm();
            if n > 0.0 {
                col /= n;
            }
        }
        SignatureSet { matrix }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AggregationScheme {
    HoaSum,
    HoaPinv,
    AohSignSum,
    AohMajority,
}

impl AggregationScheme {
    pub const ALL: [AggregationScheme; 4] = [
        AggregationScheme::HoaSum,
        AggregationScheme::HoaPinv,
        AggregationScheme::AohSignSum,
        AggregationScheme::AohMajority,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AggregationScheme::HoaSum => "hoa-sum",
            AggregationScheme::HoaPinv => "hoa-pinv",
            AggregationScheme::AohSignSum => "aoh-sign-sum",
            AggregationScheme::AohMajority => "aoh-majority",
        }
    }

    /// True when raw signatures are aggregated before embedding.
    pub fn aggregates_first(self) -> bool {
        matches!(self, AggregationScheme::HoaSum | AggregationScheme::HoaPinv)
    }
}

impl fmt::Display for AggregationScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AggregationScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        match key.as_str() {
            "hoa-sum" | "hoa-2" | "sum" => Ok(AggregationScheme::HoaSum),
            "hoa-pinv" | "hoa-3" | "pinv" => Ok(AggregationScheme::HoaPinv),
            "aoh-sign-sum" | "aoh-4" | "sign-sum" => Ok(AggregationScheme::AohSignSum),
            "aoh-majority" | "aoh-5" | "majority" => Ok(AggregationScheme::AohMajority),
            _ => Err(Error::Parse(format!("unknown aggregation scheme '{s}'"))),
        }
    }
}

/// Column sum `G 1_N`.
pub fn agg_sum(g: &SignatureSet) -> DVector<f64> {
    g.matrix.column_sum()
}

/// Result of the pseudo-inverse aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct PinvAggregate {
    pub vector: DVector<f64>,
    /// Numerical rank of `G`.
    pub rank: usize,
    /// Set when `rank < N`: the constraints `xᵢᵀf = 1` cannot all hold and
    /// `vector` is the minimum-norm least-squares solution.
    pub rank_deficient: bool,
}

/// Relative singular-value cutoff factor; values below
/// `max(d, N) · σ₁ · PINV_RCOND` count as zero.
pub const PINV_RCOND: f64 = 1e-12;

/// `f = (G†)ᵀ 1_N`, the minimum-norm vector with `Gᵀf = 1_N`.
///
/// `G` is first reduced by a QR factorization (of `G` when N ≤ d, of `Gᵀ`
/// otherwise) and the pseudo-inverse of the small triangular factor is
/// taken through its SVD.
pub fn agg_pinv(g: &SignatureSet) -> Result<PinvAggregate> {
    let (d, n) = (g.dim(), g.count());
    let ones = DVector::from_element(n, 1.0);
    let cutoff_scale = d.max(n) as f64 * PINV_RCOND;

    let (vector, rank) = if n <= d {
        // G = QR  =>  (G†)ᵀ 1 = Q (R†)ᵀ 1 = Q U Σ⁺ Vᵀ 1
        let qr = g.matrix.clone().qr();
        let q = qr.q();
        let svd = qr.r().svd(true, true);
        let (u, vt) = (svd.u.as_ref().unwrap(), svd.v_t.as_ref().unwrap());
        let (coeffs, rank) = apply_sigma_pinv(&svd.singular_values, &(vt * &ones), cutoff_scale);
        (q * (u * coeffs), rank)
    } else {
        // Gᵀ = QR  =>  (G†)ᵀ = (Gᵀ)† = R† Qᵀ = V Σ⁺ Uᵀ Qᵀ
        let qr = g.matrix.transpose().qr();
        let qt_ones = qr.q().tr_mul(&ones);
        let svd = qr.r().svd(true, true);
        let (u, vt) = (svd.u.as_ref().unwrap(), svd.v_t.as_ref().unwrap());
        let (coeffs, rank) =
            apply_sigma_pinv(&svd.singular_values, &u.tr_mul(&qt_ones), cutoff_scale);
        (vt.tr_mul(&coeffs), rank)
    };

    Ok(PinvAggregate {
        vector,
        rank,
        rank_deficient: rank < n,
    })
}

fn apply_sigma_pinv(
    singular: &DVector<f64>,
    rhs: &DVector<f64>,
    cutoff_scale: f64,
) -> (DVector<f64>, usize) {
    let sigma_max = singular.iter().cloned().fold(0.0, f64::max);
    let cutoff = sigma_max * cutoff_scale;
    let mut rank = 0;
    let out = DVector::from_iterator(
        rhs.len(),
        rhs.iter().zip(singular.iter()).map(|(&b, &s)| {
            if s > cutoff && s > 0.0 {
                rank += 1;
                b / s
            } else {
                0.0
            }
        }),
    );
    (out, rank)
}

fn check_codes<'a, I>(codes: I) -> Result<(usize, Vec<&'a TernaryCode>)>
where
    I: IntoIterator<Item = &'a TernaryCode>,
{
    let codes: Vec<&TernaryCode> = codes.into_iter().collect();
    let Some(first) = codes.first() else {
        return Err(Error::EmptyGroup);
    };
    let len = first.len();
    if codes.iter().any(|c| c.len() != len) {
        return Err(shape_err("codes have mixed lengths"));
    }
    Ok((len, codes))
}

fn symbol_sums(len: usize, codes: &[&TernaryCode]) -> Vec<i64> {
    let mut sums = vec![0i64; len];
    for code in codes {
        for (acc, &s) in sums.iter_mut().zip(code.symbols()) {
            *acc += s as i64;
        }
    }
    sums
}

/// `sign(Σ h(x))` with `sign(0) = 0`.
pub fn agg_sign_sum<'a, I>(codes: I) -> Result<TernaryCode>
where
    I: IntoIterator<Item = &'a TernaryCode>,
{
    let (len, codes) = check_codes(codes)?;
    let symbols = symbol_sums(len, &codes)
        .into_iter()
        .map(|s| s.signum() as i8)
        .collect();
    TernaryCode::new(symbols)
}

/// Symbol-wise mode. Any tie for the top count resolves to `0`, including
/// an even split between `+1` and `−1`.
pub fn agg_majority<'a, I>(codes: I) -> Result<TernaryCode>
where
    I: IntoIterator<Item = &'a TernaryCode>,
{
    let (len, codes) = check_codes(codes)?;
    // counts[i] = [#−1, #0, #+1]
    let mut counts = vec![[0u32; 3]; len];
    for code in &codes {
        for (c, &s) in counts.iter_mut().zip(code.symbols()) {
            c[(s + 1) as usize] += 1;
        }
    }
    let symbols = counts
        .into_iter()
        .map(|[neg, zero, pos]| {
            if zero >= pos.max(neg) || pos == neg {
                0
            } else if pos > neg {
                1
            } else {
                -1
            }
        })
        .collect();
    TernaryCode::new(symbols)
}

/// Raw-domain aggregate of a HoA scheme; `None` for AoH schemes.
pub fn raw_aggregate(scheme: AggregationScheme, g: &SignatureSet) -> Result<Option<PinvAggregate>> {
    match scheme {
        AggregationScheme::HoaSum => Ok(Some(PinvAggregate {
            vector: agg_sum(g),
            rank: g.count(),
            rank_deficient: false,
        })),
        AggregationScheme::HoaPinv => agg_pinv(g).map(Some),
        _ => Ok(None),
    }
}

/// Code-domain pooling of an AoH scheme.
pub fn pool_codes<'a, I>(scheme: AggregationScheme, codes: I) -> Result<TernaryCode>
where
    I: IntoIterator<Item = &'a TernaryCode>,
{
    match scheme {
        AggregationScheme::AohSignSum => agg_sign_sum(codes),
        AggregationScheme::AohMajority => agg_majority(codes),
        other => Err(Error::Unsupported(format!(
            "{other} aggregates raw signatures, not codes"
        ))),
    }
}

/// Group representative with a fixed threshold `λ` used for every
/// embedding, raw aggregates included.
pub fn group_representative(
    scheme: AggregationScheme,
    g: &SignatureSet,
    w: &TransformMatrix,
    lambda: f64,
) -> Result<TernaryCode> {
    if g.dim() != w.cols() {
        return Err(shape_err(format!(
            "signature dimension {} against transform with {} columns",
            g.dim(),
            w.cols()
        )));
    }
    match raw_aggregate(scheme, g)? {
        Some(agg) => embed(&agg.vector, w, lambda),
        None => {
            let codes = (0..g.count())
                .map(|j| embed(&g.column(j), w, lambda))
                .collect::<Result<Vec<_>>>()?;
            pool_codes(scheme, &codes)
        }
    }
}

/// A representative built at a target sparsity, with the threshold that was
/// used and the deviation it was calibrated against.
#[derive(Debug, Clone, PartialEq)]
pub struct Representative {
    pub code: TernaryCode,
    pub lambda: f64,
    /// Per-component deviation the threshold was scaled to: σx for AoH
    /// schemes, the RMS of `W a` for HoA schemes.
    pub sigma: f64,
    pub rank_deficient: bool,
}

/// Root mean square of the components of `z`.
pub fn rms(z: &[f64]) -> f64 {
    if z.is_empty() {
        return 0.0;
    }
    (z.iter().map(|v| v * v).sum::<f64>() / z.len() as f64).sqrt()
}

/// Group representative at a target non-zero fraction `s_frac`.
///
/// Signatures are embedded at `λ = σx·λ₁` with `λ₁ = −Φ⁻¹(s_frac/2)`. A raw
/// aggregate has a very different scale (√N σx for the sum, about
/// √N/(√d σx) for pinv), so HoA schemes threshold `W a` at `rms(W a)·λ₁`.
/// This makes every representative scale invariant. With `normalize` the
/// HoA input columns are first scaled to unit norm.
pub fn group_representative_at_sparsity(
    scheme: AggregationScheme,
    g: &SignatureSet,
    w: &TransformMatrix,
    s_frac: f64,
    sigma_x: f64,
    normalize: bool,
) -> Result<Representative> {
    let unit_lambda = lambda_from_sparsity(s_frac, 1.0)?;
    if !(sigma_x > 0.0) {
        return Err(domain_err(format!("sigma_x {sigma_x} must be > 0")));
    }
    if g.dim() != w.cols() {
        return Err(shape_err(format!(
            "signature dimension {} against transform with {} columns",
            g.dim(),
            w.cols()
        )));
    }
    if scheme.aggregates_first() {
        let input = if normalize { g.normalized() } else { g.clone() };
        let agg = raw_aggregate(scheme, &input)?.expect("HoA scheme");
        Ok(representative_from_aggregate(&agg, w, unit_lambda)?)
    } else {
        let lambda = sigma_x * unit_lambda;
        let codes = (0..g.count())
            .map(|j| embed(&g.column(j), w, lambda))
            .collect::<Result<Vec<_>>>()?;
        Ok(Representative {
            code: pool_codes(scheme, &codes)?,
            lambda,
            sigma: sigma_x,
            rank_deficient: false,
        })
    }
}

/// Embeds a raw aggregate at `rms(W a)·unit_lambda`.
pub fn representative_from_aggregate(
    agg: &PinvAggregate,
    w: &TransformMatrix,
    unit_lambda: f64,
) -> Result<Representative> {
    let z = w.project(&agg.vector)?;
    let sigma = rms(z.as_slice());
    let lambda = sigma * unit_lambda;
    let code = if sigma > 0.0 {
        crate::embedding::threshold(z.as_slice(), lambda)
    } else {
        TernaryCode::zeros(w.rows())
    };
    Ok(Representative {
        code,
        lambda,
        sigma,
        rank_deficient: agg.rank_deficient,
    })
}
