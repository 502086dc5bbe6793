//! What an honest-but-curious server can reconstruct.
//!
//! The server knows the (square, orthogonal) transform `W` and the signature
//! model `X ~ N(0, σ² I)`. Seeing symbol `s` tells it that the projected
//! component lies in `R₀ = [−λ, λ]`, `R₁ = (λ, ∞)` or `R₋₁ = (−∞, −λ)`; its
//! best estimate is the conditional mean of the component on that interval.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::aggregation::{
    agg_sum, group_representative_at_sparsity, AggregationScheme, SignatureSet,
};
use crate::embedding::{lambda_from_sparsity, threshold, TernaryCode, TransformMatrix};
use crate::error::{domain_err, shape_err, Error, Result};
use crate::exec::Exec;
use crate::format::fmt_f64;
use crate::normal;
use crate::rng::{fill_gaussian, substream};

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(domain_err(format!("sigma {sigma} must be > 0")))
    }
}

/// `E[Z | Z > λ]` for `Z ~ N(0, σ²)`.
pub fn conditional_mean_positive(lambda: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    if !(lambda >= 0.0) {
        return Err(domain_err(format!("lambda {lambda} must be >= 0")));
    }
    let t = lambda / sigma;
    let p1 = normal::cdf(-t);
    if p1 == 0.0 {
        // Mills-ratio limit: E[Z | Z > λ] → λ
        return Ok(lambda);
    }
    Ok(sigma * normal::pdf(t) / p1)
}

/// Conditional-mean reconstruction `Wᵀ ẑ` of a single code.
pub fn reconstruct(
    code: &TernaryCode,
    w: &TransformMatrix,
    lambda: f64,
    sigma_x: f64,
) -> Result<DVector<f64>> {
    if !w.is_square() {
        return Err(Error::Unsupported(format!(
            "reconstruction needs a square transform, got {} x {}",
            w.rows(),
            w.cols()
        )));
    }
    if code.len() != w.rows() {
        return Err(shape_err(format!(
            "code of length {} against transform with {} rows",
            code.len(),
            w.rows()
        )));
    }
    let level = conditional_mean_positive(lambda, sigma_x)?;
    let z = DVector::from_iterator(code.len(), code.symbols().iter().map(|&s| s as f64 * level));
    w.back_project(&z)
}

/// Normalized per-component error `MSE(λ) = 1 − e^{−t²} / (π Φ(−t))`,
/// `t = λ/σ`.
fn normalized_mse(t: f64) -> f64 {
    let p1 = normal::cdf(-t);
    if p1 == 0.0 {
        return 1.0;
    }
    1.0 - (-t * t).exp() / (PI * p1)
}

/// Per-component reconstruction error `σ² MSE(λ)` of one embedded signature.
pub fn mse_closed_form(lambda: f64, sigma_x: f64) -> Result<f64> {
    check_sigma(sigma_x)?;
    if !(lambda >= 0.0) {
        return Err(domain_err(format!("lambda {lambda} must be >= 0")));
    }
    Ok(sigma_x * sigma_x * normalized_mse(lambda / sigma_x))
}

/// `σ² (1 − (1 − MSE(λ)) / N)`: error on the enrolled signatures when the
/// server rebuilds the sum aggregate and divides by N.
pub fn mse_enrolled_closed_form(lambda: f64, sigma_x: f64, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(domain_err("N must be >= 1"));
    }
    let mse = mse_closed_form(lambda, sigma_x)? / (sigma_x * sigma_x);
    Ok(sigma_x * sigma_x * (1.0 - (1.0 - mse) / n as f64))
}

/// `(dN)⁻¹ Σⱼ ‖xⱼ − x̂‖²`.
pub fn empirical_mse_e(g: &SignatureSet, x_hat: &DVector<f64>) -> Result<f64> {
    if x_hat.len() != g.dim() {
        return Err(shape_err(format!(
            "estimate of dimension {} against signatures of dimension {}",
            x_hat.len(),
            g.dim()
        )));
    }
    let total: f64 = g
        .matrix()
        .column_iter()
        .map(|c| (c - x_hat).norm_squared())
        .sum();
    Ok(total / (g.dim() * g.count()) as f64)
}

/// Best scaling of a reconstruction direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingBound {
    /// Per-component lower bound on `MSE_e` over all `x̂ = κ w`.
    pub lower_bound: f64,
    /// The minimizing `κ* = wᵀm / ‖w‖²` (needs the group mean `m`).
    pub kappa_star: f64,
}

/// `d·MSE_e(κw) ≥ N⁻¹ Σ‖xⱼ‖² − (wᵀm)²/‖w‖²`, with equality at `κ*`.
pub fn scaling_attack_bound(g: &SignatureSet, w: &DVector<f64>) -> Result<ScalingBound> {
    if w.len() != g.dim() {
        return Err(shape_err(format!(
            "direction of dimension {} against signatures of dimension {}",
            w.len(),
            g.dim()
        )));
    }
    let w_sq = w.norm_squared();
    if !(w_sq > 0.0) {
        return Err(domain_err("direction must be non-zero"));
    }
    let m = g.mean();
    let wm = w.dot(&m);
    let energy = g
        .matrix()
        .column_iter()
        .map(|c| c.norm_squared())
        .sum::<f64>()
        / g.count() as f64;
    Ok(ScalingBound {
        lower_bound: ((energy - wm * wm / w_sq) / g.dim() as f64).max(0.0),
        kappa_star: wm / w_sq,
    })
}

/// Outcome of attacking one group representative.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackReport {
    pub scheme: AggregationScheme,
    pub n: usize,
    pub lambda: f64,
    /// `σx² MSE(λ)` for a single embedded signature.
    pub mse_embedding: f64,
    pub mse_enrolled_empirical: f64,
    /// Closed form, only available for `HoaSum`.
    pub mse_enrolled_theory: Option<f64>,
    pub lower_bound: f64,
    pub kappa_star: f64,
}

pub const ATTACK_CSV_HEADER: &str =
    "scheme,N,lambda,mse_embedding,mse_enrolled_empirical,mse_enrolled_theory,lower_bound";

impl AttackReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.scheme,
            self.n,
            fmt_f64(self.lambda),
            fmt_f64(self.mse_embedding),
            fmt_f64(self.mse_enrolled_empirical),
            fmt_f64(self.mse_enrolled_theory.unwrap_or(f64::NAN)),
            fmt_f64(self.lower_bound)
        )
    }
}

pub fn write_attack_csv<W: Write>(w: &mut W, reports: &[AttackReport]) -> Result<()> {
    writeln!(w, "{ATTACK_CSV_HEADER}")?;
    for r in reports {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

/// Attacks the representative of `g` built at sparsity `s_frac`.
///
/// For `HoaSum` the server rebuilds the sum aggregate and divides by N. The
/// other schemes give no handle on the group mean, so the server rebuilds
/// the representative's direction `u` and the estimate is `κ* u` with the
/// optimal (oracle) scaling: the reported error equals the lower bound and
/// is the most favourable case for the attacker.
pub fn attack_group(
    scheme: AggregationScheme,
    g: &SignatureSet,
    w: &TransformMatrix,
    s_frac: f64,
    sigma_x: f64,
    normalize: bool,
) -> Result<AttackReport> {
    let rep = group_representative_at_sparsity(scheme, g, w, s_frac, sigma_x, normalize)?;
    let unit_lambda = lambda_from_sparsity(s_frac, 1.0)?;
    let mse_embedding = mse_closed_form(unit_lambda * sigma_x, sigma_x)?;
    let n = g.count();

    let direction = if rep.sigma > 0.0 {
        reconstruct(&rep.code, w, rep.lambda, rep.sigma)?
    } else {
        DVector::zeros(g.dim())
    };
    let bound = if direction.norm_squared() > 0.0 {
        scaling_attack_bound(g, &direction)?
    } else {
        let energy = g.matrix().norm_squared() / (g.dim() * n) as f64;
        ScalingBound {
            lower_bound: energy,
            kappa_star: 0.0,
        }
    };

    let (empirical, theory) = if scheme == AggregationScheme::HoaSum {
        let x_hat = &direction / n as f64;
        (
            empirical_mse_e(g, &x_hat)?,
            Some(mse_enrolled_closed_form(unit_lambda * sigma_x, sigma_x, n)?),
        )
    } else {
        (empirical_mse_e(g, &(&direction * bound.kappa_star))?, None)
    };

    Ok(AttackReport {
        scheme,
        n,
        lambda: rep.lambda,
        mse_embedding,
        mse_enrolled_empirical: empirical,
        mse_enrolled_theory: theory,
        lower_bound: bound.lower_bound,
        kappa_star: bound.kappa_star,
    })
}

/// Monte Carlo estimate of the per-component reconstruction error of single
/// embedded signatures, `samples` draws of `N(0, σ² I_d)`.
pub fn monte_carlo_embedding_mse(
    w: &TransformMatrix,
    lambda: f64,
    sigma_x: f64,
    samples: usize,
    seed: u64,
    exec: Exec,
) -> Result<f64> {
    if !w.is_square() {
        return Err(Error::Unsupported(
            "reconstruction needs a square transform".into(),
        ));
    }
    let level = conditional_mean_positive(lambda, sigma_x)?;
    let d = w.cols();
    const BATCH: usize = 512;
    let batches = samples.div_ceil(BATCH);
    let partial = exec.map(batches, |b| {
        let count = BATCH.min(samples - b * BATCH);
        let mut data = vec![0.0; d * count];
        fill_gaussian(
            &mut substream(seed, &[0x6d_7365, b as u64]),
            sigma_x,
            &mut data,
        );
        let x = DMatrix::from_vec(d, count, data);
        let z = w.matrix() * &x;
        let mut err = 0.0;
        for j in 0..count {
            let code = threshold(z.column(j).as_slice(), lambda);
            // W is orthogonal: ‖x − Wᵀẑ‖ = ‖Wx − ẑ‖
            err += z
                .column(j)
                .iter()
                .zip(code.symbols())
                .map(|(&zi, &s)| (zi - s as f64 * level).powi(2))
                .sum::<f64>();
        }
        err
    });
    Ok(partial.into_iter().sum::<f64>() / (samples * d) as f64)
}

/// Monte Carlo estimate of `MSE_e` for the sum-aggregate attack: each trial
/// draws N fresh signatures, embeds their sum at the calibrated threshold,
/// rebuilds it and divides by N.
pub fn monte_carlo_sum_attack(
    w: &TransformMatrix,
    n: usize,
    s_frac: f64,
    sigma_x: f64,
    trials: usize,
    seed: u64,
    exec: Exec,
) -> Result<f64> {
    if n == 0 || trials == 0 {
        return Err(domain_err("N and trials must be >= 1"));
    }
    let unit_lambda = lambda_from_sparsity(s_frac, 1.0)?;
    let d = w.cols();
    let per_trial = exec.map(trials, |t| -> Result<f64> {
        let mut data = vec![0.0; d * n];
        fill_gaussian(
            &mut substream(seed, &[0x73_756d, n as u64, t as u64]),
            sigma_x,
            &mut data,
        );
        let g = SignatureSet::new(DMatrix::from_vec(d, n, data))?;
        // the server knows the sum has per-component deviation √N σx
        let sigma_sum = (n as f64).sqrt() * sigma_x;
        let z = w.project(&agg_sum(&g))?;
        let code = threshold(z.as_slice(), unit_lambda * sigma_sum);
        let x_hat = reconstruct(&code, w, unit_lambda * sigma_sum, sigma_sum)? / n as f64;
        empirical_mse_e(&g, &x_hat)
    });
    let mut total = 0.0;
    for v in per_trial {
        total += v?;
    }
    Ok(total / trials as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::make_transform;

    fn set(cols: &[&[f64]]) -> SignatureSet {
        SignatureSet::from_columns(
            &cols
                .iter()
                .map(|c| DVector::from_row_slice(c))
                .collect::<Vec<_>>(),
        )
        .unwrap()
    }

    /// Composite Simpson on [a, b] with `n` (even) panels.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn conditional_mean_matches_numeric_integration() {
        // half-normal mean √(2/π)
        let half = conditional_mean_positive(0.0, 1.0).unwrap();
        assert!((half - (2.0 / PI).sqrt()).abs() < 1e-15);
        assert!((half - 0.797884560802865).abs() < 1e-14);
        for &(lambda, sigma) in &[(0.0, 1.0), (0.6, 1.0), (1.3, 2.0), (3.0, 0.7)] {
            let a = lambda;
            let b = lambda + 40.0 * sigma;
            let num = simpson(|z| z * normal::pdf_sigma(z, sigma), a, b, 20_000);
            let den = simpson(|z| normal::pdf_sigma(z, sigma), a, b, 20_000);
            let got = conditional_mean_positive(lambda, sigma).unwrap();
            assert!((got - num / den).abs() < 1e-9, "λ={lambda} σ={sigma}");
        }
    }

    #[test]
    fn reconstruct_examples() {
        let w = make_transform(8, 8, 3).unwrap();
        let zero = reconstruct(&TernaryCode::zeros(8), &w, 0.5, 1.0).unwrap();
        assert_eq!(zero, DVector::zeros(8));
        let c = TernaryCode::new(vec![1, -1, 0, 1, 0, 0, -1, 1]).unwrap();
        let a = reconstruct(&c, &w, 0.4, 1.3).unwrap();
        let b = reconstruct(&c.negated(), &w, 0.4, 1.3).unwrap();
        assert!((a + b).amax() < 1e-15);
        let rect = make_transform(8, 4, 3).unwrap();
        assert!(matches!(
            reconstruct(&TernaryCode::zeros(4), &rect, 0.5, 1.0),
            Err(Error::Unsupported(_))
        ));
        assert!(matches!(
            reconstruct(&TernaryCode::zeros(7), &w, 0.5, 1.0),
            Err(Error::InvalidShape(_))
        ));
    }

    #[test]
    fn mse_closed_form_examples() {
        assert!((mse_closed_form(0.0, 1.0).unwrap() - (1.0 - 2.0 / PI)).abs() < 1e-12);
        assert!((mse_closed_form(0.0, 1.0).unwrap() - 0.363380227632419).abs() < 1e-12);
        assert!((mse_closed_form(0.6, 1.0).unwrap() - 0.190247047083075).abs() < 1e-12);
        assert!((mse_closed_form(5.0, 1.0).unwrap() - 0.999984578246678).abs() < 1e-12);
        assert!((mse_closed_form(1.2, 2.0).unwrap() - 4.0 * 0.190247047083075).abs() < 1e-12);
        assert_eq!(mse_closed_form(100.0, 1.0).unwrap(), 1.0);
        assert!(matches!(mse_closed_form(0.5, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn closed_form_is_the_conditional_variance() {
        // independent route: E[Z²] − Σ_s P(s) ẑ(s)²
        for &lambda in &[0.0, 0.3, 0.6, 1.0, 2.0, 4.0] {
            let p1 = normal::cdf(-lambda);
            let zhat = conditional_mean_positive(lambda, 1.0).unwrap();
            let via_variance = 1.0 - 2.0 * p1 * zhat * zhat;
            assert!((mse_closed_form(lambda, 1.0).unwrap() - via_variance).abs() < 1e-12);
        }
    }

    #[test]
    fn enrolled_closed_form_examples() {
        let base = mse_closed_form(0.6, 1.0).unwrap();
        assert!((mse_enrolled_closed_form(0.6, 1.0, 1).unwrap() - base).abs() < 1e-15);
        assert!(
            (mse_enrolled_closed_form(0.6, 1.0, 128).unwrap() - 0.993673805055337).abs() < 1e-12
        );
        assert!((mse_enrolled_closed_form(0.6, 1.0, 1 << 40).unwrap() - 1.0).abs() < 1e-9);
        let mut prev = 0.0;
        for n in 1..200 {
            let v = mse_enrolled_closed_form(0.9, 1.5, n).unwrap();
            assert!(v >= prev);
            prev = v;
        }
        assert!(matches!(
            mse_enrolled_closed_form(0.6, 1.0, 0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn empirical_mse_e_examples() {
        let g = set(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let x_hat = DVector::from_row_slice(&[0.5, 0.5]);
        assert!((empirical_mse_e(&g, &x_hat).unwrap() - 0.25).abs() < 1e-15);
        let one = set(&[&[3.0, -1.0, 2.0]]);
        assert_eq!(empirical_mse_e(&one, &one.column(0)).unwrap(), 0.0);
        let e = empirical_mse_e(&g, &DVector::zeros(2)).unwrap();
        assert!((e - 0.5).abs() < 1e-15);
        assert!(empirical_mse_e(&g, &DVector::zeros(3)).is_err());
    }

    fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
        let r = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let c = b - r * (b - a);
            let d = a + r * (b - a);
            if f(c) < f(d) {
                b = d;
            } else {
                a = c;
            }
        }
        f(0.5 * (a + b))
    }

    #[test]
    fn scaling_bound_matches_scalar_minimization() {
        let g = set(&[&[1.0, 2.0, 0.5], &[0.3, 1.5, -0.2], &[2.0, 0.1, 1.0]]);
        for w in [g.mean(), DVector::from_row_slice(&[1.0, -1.0, 0.5])] {
            let bound = scaling_attack_bound(&g, &w).unwrap();
            let min = golden_section(|k| empirical_mse_e(&g, &(&w * k)).unwrap(), -50.0, 50.0);
            assert!((bound.lower_bound - min).abs() < 1e-10);
            let at_star = empirical_mse_e(&g, &(&w * bound.kappa_star)).unwrap();
            assert!((at_star - bound.lower_bound).abs() < 1e-12);
        }
        // w ∝ m gives the smallest bound
        let best = scaling_attack_bound(&g, &g.mean()).unwrap().lower_bound;
        let other = scaling_attack_bound(&g, &DVector::from_row_slice(&[1.0, 0.0, 0.0])).unwrap();
        assert!(best <= other.lower_bound);
    }

    #[test]
    fn scaling_bound_edge_cases() {
        let g = set(&[&[1.0, 2.0], &[-1.0, -2.0]]);
        let b = scaling_attack_bound(&g, &DVector::from_row_slice(&[0.3, 0.4])).unwrap();
        assert_eq!(b.kappa_star, 0.0);
        assert!((b.lower_bound - 5.0 / 2.0).abs() < 1e-15);

        let one = set(&[&[1.0, -3.0, 2.0]]);
        let b = scaling_attack_bound(&one, &one.column(0)).unwrap();
        assert!((b.kappa_star - 1.0).abs() < 1e-15);
        assert!(b.lower_bound.abs() < 1e-15);

        assert!(matches!(
            scaling_attack_bound(&one, &DVector::zeros(3)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn attack_report_csv() {
        let w = make_transform(16, 16, 1).unwrap();
        let mut data = vec![0.0; 16 * 4];
        fill_gaussian(&mut substream(3, &[]), 1.0, &mut data);
        let g = SignatureSet::new(DMatrix::from_vec(16, 4, data)).unwrap();
        let reports: Vec<_> = AggregationScheme::ALL
            .iter()
            .map(|&s| attack_group(s, &g, &w, 0.5, 1.0, false).unwrap())
            .collect();
        for r in &reports {
            assert!(r.mse_enrolled_empirical >= r.lower_bound - 1e-12);
            assert_eq!(
                r.mse_enrolled_theory.is_some(),
                r.scheme == AggregationScheme::HoaSum
            );
        }
        let mut buf = Vec::new();
        write_attack_csv(&mut buf, &reports).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(ATTACK_CSV_HEADER));
        assert_eq!(text.lines().count(), 5);
        assert!(text.lines().nth(2).unwrap().contains(",nan,"));
    }
}
