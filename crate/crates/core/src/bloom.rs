//! Bloom filter baseline over ternary codes.
//!
//! Signatures are quantized with a sparse ternary code of length ℓ and the
//! serialized code is inserted in a classic Bloom filter. A noisy query is
//! accepted only if its code is bit-for-bit identical to an enrolled one, so
//! (λ, ℓ) are tuned to make that event likely while keeping the codes
//! diverse enough for the filter's uniform-hashing assumption.

use std::f64::consts::LN_2;
use std::fmt;
use std::hash::Hasher;
use std::io::Write;
use std::str::FromStr;

use siphasher::sip::SipHasher13;

use crate::embedding::TernaryCode;
use crate::error::{domain_err, shape_err, Error, Result};
use crate::exec::Exec;
use crate::format::fmt_f64;
use crate::normal;
use crate::quadrature::adaptive_simpson;
use crate::rng::derive_key;

/// Absolute tolerance of each quadrature term in `p_s`.
pub const QUAD_TOL: f64 = 1e-10;
pub const DEFAULT_ENTROPY_MARGIN: f64 = 3.0;
pub const DEFAULT_EPSILON: f64 = 1e-3;

/// Which per-symbol entropy to use in the diversity constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EntropyForm {
    /// `−2p ln(2p) − (1−2p) ln(1−2p)`: entropy of the support pattern only.
    #[default]
    Support,
    /// `−2p ln p − (1−2p) ln(1−2p)`: full ternary entropy.
    Ternary,
}

impl FromStr for EntropyForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "support" | "printed" => Ok(Self::Support),
            "ternary" => Ok(Self::Ternary),
            other => Err(Error::Parse(format!("unknown entropy form '{other}'"))),
        }
    }
}

impl fmt::Display for EntropyForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Support => "support",
            Self::Ternary => "ternary",
        })
    }
}

/// Statistics of the quantize-then-compare channel for one (λ, ℓ).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelStats {
    /// Code entropy in nats.
    pub entropy: f64,
    /// Probability that a signature quantizes to the all-zero code.
    pub pi0: f64,
    /// Probability that noise leaves the whole code unchanged.
    pub pi: f64,
    /// `Φ(−λ/σx)`, probability of each non-zero symbol.
    pub p: f64,
    /// Probability that noise leaves one symbol unchanged.
    pub p_s: f64,
}

fn xlnx(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// Per-symbol entropy in nats.
pub fn symbol_entropy(p: f64, form: EntropyForm) -> f64 {
    match form {
        EntropyForm::Support => -xlnx(2.0 * p) - xlnx(1.0 - 2.0 * p),
        EntropyForm::Ternary => -2.0 * xlnx(p) - xlnx(1.0 - 2.0 * p),
    }
}

fn check_channel(lambda: f64, sigma_x: f64, sigma_n: f64) -> Result<()> {
    if !(sigma_x > 0.0 && sigma_x.is_finite()) {
        return Err(domain_err(format!("sigma_x {sigma_x} must be > 0")));
    }
    if !(sigma_n >= 0.0 && sigma_n.is_finite()) {
        return Err(domain_err(format!("sigma_n {sigma_n} must be >= 0")));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(domain_err(format!("lambda {lambda} must be >= 0")));
    }
    Ok(())
}

/// Probability that one symbol survives additive noise:
/// `2∫_λ^∞ φσx(x) Pr(x+n > λ) dx + ∫_{−λ}^{λ} φσx(x) Pr(|x+n| ≤ λ) dx`.
pub fn symbol_survival(lambda: f64, sigma_x: f64, sigma_n: f64) -> Result<f64> {
    check_channel(lambda, sigma_x, sigma_n)?;
    if sigma_n == 0.0 {
        return Ok(1.0);
    }
    let upper = lambda + 10.0 * sigma_x + 10.0 * sigma_n;
    let keep_sign = |x: f64| normal::pdf_sigma(x, sigma_x) * normal::cdf_sigma(x - lambda, sigma_n);
    let stay_zero = |x: f64| {
        normal::pdf_sigma(x, sigma_x)
            * (normal::cdf_sigma(lambda - x, sigma_n) - normal::cdf_sigma(-lambda - x, sigma_n))
    };
    let outer = adaptive_simpson(keep_sign, lambda, upper, QUAD_TOL)?;
    let inner = adaptive_simpson(stay_zero, -lambda, lambda, QUAD_TOL)?;
    Ok((2.0 * outer + inner).clamp(0.0, 1.0))
}

fn stats_from_parts(p: f64, p_s: f64, l: usize, form: EntropyForm) -> ChannelStats {
    let lf = l as f64;
    ChannelStats {
        entropy: lf * symbol_entropy(p, form),
        pi0: (1.0 - 2.0 * p).powf(lf),
        pi: if p_s >= 1.0 {
            1.0
        } else {
            (lf * p_s.ln()).exp()
        },
        p,
        p_s,
    }
}

pub fn channel_stats(
    lambda: f64,
    l: usize,
    sigma_x: f64,
    sigma_n: f64,
    form: EntropyForm,
) -> Result<ChannelStats> {
    if l == 0 {
        return Err(domain_err("code length must be >= 1"));
    }
    let p_s = symbol_survival(lambda, sigma_x, sigma_n)?;
    let p = normal::cdf(-lambda / sigma_x);
    Ok(stats_from_parts(p, p_s, l, form))
}

/// Optimal Bloom filter length `⌈N |ln p_fp| / ln² 2⌉`.
pub fn bloom_length(n: usize, p_fp: f64) -> Result<usize> {
    if n == 0 {
        return Err(domain_err("N must be >= 1"));
    }
    if !(p_fp > 0.0 && p_fp < 1.0) {
        return Err(domain_err(format!("p_fp {p_fp} must lie in (0, 1)")));
    }
    Ok((n as f64 * p_fp.ln().abs() / (LN_2 * LN_2)).ceil() as usize)
}

/// Classic optimum `(ℓ_B / N) ln 2`, rounded, at least 1.
pub fn hash_count(l_b: usize, n: usize) -> usize {
    ((l_b as f64 / n as f64 * LN_2).round() as usize).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BloomParams {
    pub lambda: f64,
    pub l: usize,
    pub l_b: usize,
    pub k_hashes: usize,
    pub entropy_margin_h: f64,
    pub epsilon: f64,
    pub n: usize,
    pub p_fp: f64,
    pub stats: ChannelStats,
}

pub const BLOOM_CSV_HEADER: &str = "lambda,l,l_b,k,H,pi0,pi";

impl BloomParams {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            fmt_f64(self.lambda),
            self.l,
            self.l_b,
            self.k_hashes,
            fmt_f64(self.stats.entropy),
            fmt_f64(self.stats.pi0),
            fmt_f64(self.stats.pi)
        )
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "{BLOOM_CSV_HEADER}")?;
        writeln!(w, "{}", self.csv_row())?;
        Ok(())
    }

    /// Whether both tuning constraints hold for the stored statistics.
    pub fn is_feasible(&self) -> bool {
        satisfies(
            &self.stats,
            self.l_b,
            self.entropy_margin_h,
            self.epsilon,
            self.n,
        )
    }
}

fn satisfies(stats: &ChannelStats, l_b: usize, h: f64, epsilon: f64, n: usize) -> bool {
    stats.entropy > (l_b as f64).ln() + h && stats.pi0 < epsilon / n as f64
}

/// Search grid for [`tune`].
#[derive(Debug, Clone, PartialEq)]
pub struct TuneGrid {
    /// λ runs over `[0, lambda_max·σx]` in steps of `lambda_step·σx`.
    pub lambda_max: f64,
    pub lambda_step: f64,
    pub l_min: usize,
    pub l_max: usize,
    pub entropy_form: EntropyForm,
}

impl Default for TuneGrid {
    fn default() -> Self {
        Self {
            lambda_max: 5.0,
            lambda_step: 0.005,
            l_min: 8,
            l_max: 4096,
            entropy_form: EntropyForm::Support,
        }
    }
}

/// Grid search for `max π(λ, ℓ)` subject to `H(λ, ℓ) > ln ℓ_B + h` and
/// `π₀(λ, ℓ) < ε/N`. Ties keep the smallest λ, then the smallest ℓ.
#[allow(clippy::too_many_arguments)]
pub fn tune(
    n: usize,
    p_fp: f64,
    h: f64,
    epsilon: f64,
    sigma_x: f64,
    sigma_n: f64,
    grid: &TuneGrid,
    exec: Exec,
) -> Result<BloomParams> {
    let l_b = bloom_length(n, p_fp)?;
    check_channel(0.0, sigma_x, sigma_n)?;
    if !(epsilon > 0.0) {
        return Err(domain_err("epsilon must be > 0"));
    }
    if grid.l_min == 0 || grid.l_min > grid.l_max {
        return Err(domain_err("empty code-length range"));
    }
    if !(grid.lambda_step > 0.0 && grid.lambda_max >= 0.0) {
        return Err(domain_err("invalid lambda grid"));
    }
    let steps = (grid.lambda_max / grid.lambda_step + 1e-9).floor() as usize + 1;
    let survival = exec.map(steps, |i| {
        let lambda = i as f64 * grid.lambda_step * sigma_x;
        symbol_survival(lambda, sigma_x, sigma_n).map(|p_s| (lambda, p_s))
    });

    let mut best: Option<(f64, usize, ChannelStats)> = None;
    for item in survival {
        let (lambda, p_s) = item?;
        let p = normal::cdf(-lambda / sigma_x);
        for l in grid.l_min..=grid.l_max {
            let stats = stats_from_parts(p, p_s, l, grid.entropy_form);
            if !satisfies(&stats, l_b, h, epsilon, n) {
                continue;
            }
            if best.as_ref().is_none_or(|b| stats.pi > b.2.pi) {
                best = Some((lambda, l, stats));
            }
            // π is non-increasing in ℓ: larger ℓ at this λ cannot win
            break;
        }
    }
    let (lambda, l, stats) = best.ok_or_else(|| {
        Error::Infeasible(format!(
            "no (lambda, l) on the grid satisfies the constraints for N = {n}, p_fp = {p_fp}"
        ))
    })?;
    Ok(BloomParams {
        lambda,
        l,
        l_b,
        k_hashes: hash_count(l_b, n),
        entropy_margin_h: h,
        epsilon,
        n,
        p_fp,
        stats,
    })
}

/// Bit array with `k` keyed SipHash functions over serialized codes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BloomFilter {
    words: Vec<u64>,
    bits: usize,
    keys: Vec<(u64, u64)>,
    code_len: usize,
}

impl BloomFilter {
    pub fn new(bits: usize, k_hashes: usize, code_len: usize, hash_seed: u64) -> Result<Self> {
        if bits == 0 || k_hashes == 0 {
            return Err(domain_err("filter length and hash count must be >= 1"));
        }
        let keys = (0..k_hashes as u64)
            .map(|i| {
                (
                    derive_key(hash_seed, &[i, 0]),
                    derive_key(hash_seed, &[i, 1]),
                )
            })
            .collect();
        Ok(Self {
            words: vec![0; bits.div_ceil(64)],
            bits,
            keys,
            code_len,
        })
    }

    pub fn len(&self) -> usize {
        self.bits
    }

    pub fn is_empty(&self) -> bool {
        self.bits == 0
    }

    pub fn k_hashes(&self) -> usize {
        self.keys.len()
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    fn indices<'a>(&'a self, code: &TernaryCode) -> Result<impl Iterator<Item = usize> + 'a> {
        if code.len() != self.code_len {
            return Err(shape_err(format!(
                "code of length {} against a filter for length {}",
                code.len(),
                self.code_len
            )));
        }
        let bytes = code.to_bytes();
        Ok(self.keys.iter().map(move |&(k0, k1)| {
            let mut h = SipHasher13::new_with_keys(k0, k1);
            h.write(&bytes);
            (h.finish() % self.bits as u64) as usize
        }))
    }

    pub fn insert(&mut self, code: &TernaryCode) -> Result<()> {
        let idx: Vec<usize> = self.indices(code)?.collect();
        for i in idx {
            self.words[i / 64] |= 1 << (i % 64);
        }
        Ok(())
    }

    pub fn contains(&self, code: &TernaryCode) -> Result<bool> {
        Ok(self
            .indices(code)?
            .all(|i| self.words[i / 64] & (1 << (i % 64)) != 0))
    }
}

pub fn bloom_enroll<'a, I>(codes: I, params: &BloomParams, hash_seed: u64) -> Result<BloomFilter>
where
    I: IntoIterator<Item = &'a TernaryCode>,
{
    let mut filter = BloomFilter::new(params.l_b, params.k_hashes, params.l, hash_seed)?;
    for c in codes {
        filter.insert(c)?;
    }
    Ok(filter)
}

pub fn bloom_query(filter: &BloomFilter, code: &TernaryCode) -> Result<bool> {
    filter.contains(code)
}
