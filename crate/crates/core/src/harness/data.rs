//! Synthetic signatures and queries.
//!
//! Every column has its own substream, so a matrix of N signatures is a
//! prefix of the matrix of N + 1 signatures drawn with the same seed.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::aggregation::SignatureSet;
use crate::error::{domain_err, Result};
use crate::exec::Exec;
use crate::rng::{derive_key, fill_gaussian, substream};

const SIGNATURE_TAG: u64 = 0x7369_676e;
const NOISE_TAG: u64 = 0x6e6f_6973;
const RELATED_TAG: u64 = 0x6831;
const UNRELATED_TAG: u64 = 0x6830;

fn gaussian_columns(
    d: usize,
    n: usize,
    sigma: f64,
    seed: u64,
    tag: u64,
    exec: Exec,
) -> DMatrix<f64> {
    let cols = exec.map(n, |j| {
        let mut col = vec![0.0; d];
        fill_gaussian(&mut substream(seed, &[tag, j as u64]), sigma, &mut col);
        col
    });
    DMatrix::from_vec(d, n, cols.concat())
}

fn check(n: usize, d: usize, sigma: f64) -> Result<()> {
    if n == 0 || d == 0 {
        return Err(domain_err("n and d must be >= 1"));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(domain_err(format!("sigma_x {sigma} must be > 0")));
    }
    Ok(())
}

/// N i.i.d. `N(0, σx² I_d)` signatures.
pub fn gen_signatures(n: usize, d: usize, sigma_x: f64, seed: u64) -> Result<SignatureSet> {
    gen_signatures_with(n, d, sigma_x, seed, Exec::default())
}

pub fn gen_signatures_with(
    n: usize,
    d: usize,
    sigma_x: f64,
    seed: u64,
    exec: Exec,
) -> Result<SignatureSet> {
    check(n, d, sigma_x)?;
    SignatureSet::new(gaussian_columns(d, n, sigma_x, seed, SIGNATURE_TAG, exec))
}

/// `y = x + n` with `n ~ N(0, σn² I)`.
pub fn gen_query(x: &DVector<f64>, sigma_n: f64, seed: u64) -> Result<DVector<f64>> {
    if !(sigma_n >= 0.0 && sigma_n.is_finite()) {
        return Err(domain_err(format!("sigma_n {sigma_n} must be >= 0")));
    }
    let mut noise = vec![0.0; x.len()];
    if sigma_n > 0.0 {
        fill_gaussian(&mut substream(seed, &[NOISE_TAG]), sigma_n, &mut noise);
    }
    Ok(x + DVector::from_vec(noise))
}

/// Queries for one experiment: noisy copies of enrolled signatures (H1)
/// and fresh signatures (H0), as matrix columns.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySet {
    pub related: DMatrix<f64>,
    /// Enrolled index each related query was derived from.
    pub source: Vec<usize>,
    pub unrelated: DMatrix<f64>,
}

pub fn gen_query_set(
    g: &SignatureSet,
    trials_pos: usize,
    trials_neg: usize,
    sigma_x: f64,
    sigma_n: f64,
    seed: u64,
    exec: Exec,
) -> Result<QuerySet> {
    check(trials_neg.max(1), g.dim(), sigma_x)?;
    let d = g.dim();
    let pairs = exec.map(trials_pos, |t| -> Result<(usize, Vec<f64>)> {
        let j = substream(seed, &[RELATED_TAG, t as u64]).random_range(0..g.count());
        let y = gen_query(
            &g.column(j),
            sigma_n,
            derive_key(seed, &[RELATED_TAG, t as u64]),
        )?;
        Ok((j, y.data.into()))
    });
    let mut source = Vec::with_capacity(trials_pos);
    let mut data = Vec::with_capacity(trials_pos * d);
    for p in pairs {
        let (j, y) = p?;
        source.push(j);
        data.extend(y);
    }
    Ok(QuerySet {
        related: DMatrix::from_vec(d, trials_pos, data),
        source,
        unrelated: gaussian_columns(d, trials_neg, sigma_x, seed, UNRELATED_TAG, exec),
    })
}
