//! Experiment configuration and its `key = value` text form.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::aggregation::AggregationScheme;
use crate::bloom::{EntropyForm, DEFAULT_ENTROPY_MARGIN, DEFAULT_EPSILON};
use crate::error::{Error, Result};
use crate::format::fmt_f64;
use crate::partition::{Partitioner, DEFAULT_KMEANS_ITERS};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub d: usize,
    /// Code length; `None` means square (ℓ = d).
    pub l: Option<usize>,
    pub n: usize,
    pub m: usize,
    pub sigma_x: f64,
    pub sigma_n: f64,
    pub sparsity_grid: Vec<f64>,
    pub schemes: Vec<AggregationScheme>,
    /// Pins a single sparsity for a scheme instead of sweeping the grid.
    pub scheme_sparsity: Vec<(AggregationScheme, f64)>,
    pub partitioner: Partitioner,
    pub trials_pos: usize,
    pub trials_neg: usize,
    /// Scale HoA inputs to unit norm before aggregating.
    pub normalize_signatures: bool,
    pub max_iters: usize,
    /// Compute the reconstruction-attack columns.
    pub attack: bool,
    /// Append a tuned Bloom filter row.
    pub bloom: bool,
    pub bloom_p_fp: f64,
    pub bloom_h: f64,
    pub bloom_epsilon: f64,
    pub entropy_form: EntropyForm,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            d: 1024,
            l: None,
            n: 128,
            m: 1,
            sigma_x: 1.0,
            sigma_n: 0.1,
            sparsity_grid: (1..=9).map(|i| i as f64 / 10.0).collect(),
            schemes: AggregationScheme::ALL.to_vec(),
            scheme_sparsity: Vec::new(),
            partitioner: Partitioner::Random,
            trials_pos: 2000,
            trials_neg: 2000,
            normalize_signatures: false,
            max_iters: DEFAULT_KMEANS_ITERS,
            attack: true,
            bloom: false,
            bloom_p_fp: 0.01,
            bloom_h: DEFAULT_ENTROPY_MARGIN,
            bloom_epsilon: DEFAULT_EPSILON,
            entropy_form: EntropyForm::Support,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("{key}: cannot parse '{value}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Parse(format!(
            "{key}: expected a boolean, got '{value}'"
        ))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

impl ExperimentConfig {
    /// Reads `key = value` lines on top of the defaults. Blank lines and
    /// `#` comments are ignored; unknown keys are an error.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Applies `key = value` lines on top of `self`, then validates.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key = value", no + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        self.validate()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_num(key, value)?,
            "d" => self.d = parse_num(key, value)?,
            "l" => {
                self.l = match value {
                    "" | "d" | "auto" => None,
                    v => Some(parse_num(key, v)?),
                }
            }
            "n" | "N" => self.n = parse_num(key, value)?,
            "m" | "M" => self.m = parse_num(key, value)?,
            "sigma_x" => self.sigma_x = parse_num(key, value)?,
            "sigma_n" => self.sigma_n = parse_num(key, value)?,
            "sparsity_grid" => self.sparsity_grid = parse_list(key, value)?,
            "schemes" => self.schemes = parse_list(key, value)?,
            "scheme_sparsity" => {
                self.scheme_sparsity = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|item| {
                        let (s, v) = item.split_once(':').ok_or_else(|| {
                            Error::Parse(format!("{key}: expected scheme:value, got '{item}'"))
                        })?;
                        Ok((s.parse()?, parse_num(key, v)?))
                    })
                    .collect::<Result<_>>()?
            }
            "partitioner" => self.partitioner = value.parse()?,
            "trials_pos" => self.trials_pos = parse_num(key, value)?,
            "trials_neg" => self.trials_neg = parse_num(key, value)?,
            "normalize_signatures" => self.normalize_signatures = parse_bool(key, value)?,
            "max_iters" => self.max_iters = parse_num(key, value)?,
            "attack" => self.attack = parse_bool(key, value)?,
            "bloom" => self.bloom = parse_bool(key, value)?,
            "bloom_p_fp" => self.bloom_p_fp = parse_num(key, value)?,
            "bloom_h" => self.bloom_h = parse_num(key, value)?,
            "bloom_epsilon" => self.bloom_epsilon = parse_num(key, value)?,
            "entropy_form" => self.entropy_form = value.parse()?,
            other => return Err(Error::Parse(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Text form that [`ExperimentConfig::parse`] reads back unchanged.
    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(", ");
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "d = {}", self.d);
        let _ = writeln!(
            s,
            "l = {}",
            self.l.map_or("d".to_string(), |l| l.to_string())
        );
        let _ = writeln!(s, "n = {}", self.n);
        let _ = writeln!(s, "m = {}", self.m);
        let _ = writeln!(s, "sigma_x = {:?}", self.sigma_x);
        let _ = writeln!(s, "sigma_n = {:?}", self.sigma_n);
        let _ = writeln!(s, "sparsity_grid = {}", join(&self.sparsity_grid));
        let schemes: Vec<_> = self.schemes.iter().map(|s| s.name()).collect();
        let _ = writeln!(s, "schemes = {}", schemes.join(", "));
        let pinned: Vec<_> = self
            .scheme_sparsity
            .iter()
            .map(|(s, v)| format!("{}:{:?}", s.name(), v))
            .collect();
        let _ = writeln!(s, "scheme_sparsity = {}", pinned.join(", "));
        let _ = writeln!(s, "partitioner = {}", self.partitioner);
        let _ = writeln!(s, "trials_pos = {}", self.trials_pos);
        let _ = writeln!(s, "trials_neg = {}", self.trials_neg);
        let _ = writeln!(s, "normalize_signatures = {}", self.normalize_signatures);
        let _ = writeln!(s, "max_iters = {}", self.max_iters);
        let _ = writeln!(s, "attack = {}", self.attack);
        let _ = writeln!(s, "bloom = {}", self.bloom);
        let _ = writeln!(s, "bloom_p_fp = {:?}", self.bloom_p_fp);
        let _ = writeln!(s, "bloom_h = {:?}", self.bloom_h);
        let _ = writeln!(s, "bloom_epsilon = {:?}", self.bloom_epsilon);
        let _ = writeln!(s, "entropy_form = {}", self.entropy_form);
        s
    }

    pub fn code_len(&self) -> usize {
        self.l.unwrap_or(self.d)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Domain(msg));
        if self.d == 0 || self.n == 0 || self.m == 0 || self.trials_pos == 0 || self.trials_neg == 0
        {
            return bad("d, n, m and trial counts must be >= 1".into());
        }
        if self.m > self.n {
            return bad(format!("m = {} exceeds n = {}", self.m, self.n));
        }
        if self.code_len() == 0 || self.code_len() > self.d {
            return bad(format!(
                "code length {} must lie in 1..={}",
                self.code_len(),
                self.d
            ));
        }
        if !(self.sigma_x > 0.0 && self.sigma_x.is_finite()) {
            return bad("sigma_x must be > 0".into());
        }
        if !(self.sigma_n >= 0.0 && self.sigma_n.is_finite()) {
            return bad("sigma_n must be >= 0".into());
        }
        let in_range = |s: f64| s > 0.0 && s <= 1.0;
        if self.sparsity_grid.iter().any(|&s| !in_range(s))
            || self.scheme_sparsity.iter().any(|&(_, s)| !in_range(s))
        {
            return bad("sparsity values must lie in (0, 1]".into());
        }
        if self.schemes.is_empty() && !self.bloom {
            return bad("nothing to run: no schemes and no Bloom row".into());
        }
        if self
            .schemes
            .iter()
            .any(|s| !self.scheme_sparsity.iter().any(|p| p.0 == *s))
            && self.sparsity_grid.is_empty()
        {
            return bad("empty sparsity grid".into());
        }
        if !(self.bloom_p_fp > 0.0 && self.bloom_p_fp < 1.0) {
            return bad("bloom_p_fp must lie in (0, 1)".into());
        }
        Ok(())
    }

    /// Sparsities to run for `scheme`: the pinned one if any, else the grid.
    pub fn sparsities_for(&self, scheme: AggregationScheme) -> Vec<f64> {
        match self.scheme_sparsity.iter().find(|p| p.0 == scheme) {
            Some(&(_, s)) => vec![s],
            None => self.sparsity_grid.clone(),
        }
    }

    /// Shrinks trial counts (and N unless `keep_n`) by `scale`, keeping at
    /// least 50 trials and at least M signatures.
    pub fn scaled(&self, scale: f64, keep_n: bool) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Domain(format!("scale {scale} must be > 0")));
        }
        let shrink = |v: usize, floor: usize| ((v as f64 * scale).round() as usize).max(floor);
        let mut out = self.clone();
        out.trials_pos = shrink(self.trials_pos, 50);
        out.trials_neg = shrink(self.trials_neg, 50);
        if !keep_n {
            out.n = shrink(self.n, self.m);
        }
        Ok(out)
    }
}
