mod io;

use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gmv_core::aggregation::group_representative_at_sparsity;
use gmv_core::attack::{attack_group, write_attack_csv};
use gmv_core::bloom::{tune, EntropyForm, TuneGrid, DEFAULT_ENTROPY_MARGIN, DEFAULT_EPSILON};
use gmv_core::embedding::{lambda_from_sparsity, make_transform, threshold_columns};
use gmv_core::format::fmt_f64;
use gmv_core::harness::pipeline::partition_for;
use gmv_core::harness::{
    gen_query, gen_signatures_with, preset_configs, run_experiment, write_results,
    ExperimentConfig, Preset,
};
use gmv_core::verification::{decide, roc_curve};
use gmv_core::{AggregationScheme, Exec, Partitioner};
use nalgebra::DMatrix;

use crate::io::{
    open_out, read_reps, read_scores, read_text, read_vectors, write_reps, write_vectors, RepRecord,
};

/// Group membership verification with sparse ternary codes.
#[derive(Parser, Debug)]
#[command(name = "gmv", version, about)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Master seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output file (stdout if omitted).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Shrinks trial counts (and N where it is not swept).
    #[arg(long, global = true, default_value_t = 1.0)]
    scale: f64,
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run on one thread.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw Gaussian signatures, or noisy copies of existing ones.
    Gen(GenArgs),
    /// Build group representatives from a signature file.
    Enroll(EnrollArgs),
    /// Score query vectors against enrolled representatives.
    Verify(VerifyArgs),
    /// ROC curve from two score files.
    Roc(RocArgs),
    /// Reconstruction attack on a signature file treated as one group.
    Attack(AttackArgs),
    /// Tune the Bloom filter baseline.
    BloomTune(BloomArgs),
    /// Run a named preset or `custom` (needs --config).
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, default_value_t = 128)]
    n: usize,
    #[arg(long, default_value_t = 1024)]
    d: usize,
    #[arg(long, default_value_t = 1.0)]
    sigma_x: f64,
    /// Emit `x + noise` for every row of this file instead of fresh draws.
    #[arg(long)]
    from: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    sigma_n: f64,
}

#[derive(Args, Debug)]
struct EnrollArgs {
    #[arg(long)]
    signatures: PathBuf,
    #[arg(long, default_value = "hoa-pinv")]
    scheme: AggregationScheme,
    /// Target non-zero fraction S/d.
    #[arg(long, default_value_t = 0.6)]
    sparsity: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma_x: f64,
    #[arg(long, default_value_t = 1)]
    m: usize,
    #[arg(long, default_value = "random")]
    partitioner: Partitioner,
    /// Code length (defaults to the signature dimension).
    #[arg(long)]
    l: Option<usize>,
    #[arg(long)]
    normalize: bool,
    /// Also write the `index,group_id` assignment here.
    #[arg(long)]
    assignment: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long)]
    reps: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    /// Acceptance threshold on the score (strict).
    #[arg(long, default_value_t = f64::NEG_INFINITY, allow_hyphen_values = true)]
    tau: f64,
}

#[derive(Args, Debug)]
struct RocArgs {
    /// Scores of related queries (a `score` column).
    #[arg(long)]
    pos: PathBuf,
    /// Scores of unrelated queries.
    #[arg(long)]
    neg: PathBuf,
}

#[derive(Args, Debug)]
struct AttackArgs {
    #[arg(long)]
    signatures: PathBuf,
    /// Comma-separated schemes (all by default).
    #[arg(long, value_delimiter = ',')]
    schemes: Vec<AggregationScheme>,
    #[arg(long, default_value_t = 0.6)]
    sparsity: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma_x: f64,
    #[arg(long)]
    normalize: bool,
}

#[derive(Args, Debug)]
struct BloomArgs {
    #[arg(long, default_value_t = 128)]
    n: usize,
    #[arg(long, default_value_t = 0.01)]
    p_fp: f64,
    /// Entropy margin in nats.
    #[arg(long, default_value_t = DEFAULT_ENTROPY_MARGIN)]
    h: f64,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma_x: f64,
    #[arg(long, default_value_t = 0.1)]
    sigma_n: f64,
    #[arg(long, default_value_t = 4096)]
    l_max: usize,
    /// λ grid step in units of σx.
    #[arg(long, default_value_t = 0.005)]
    lambda_step: f64,
    #[arg(long, default_value = "support")]
    entropy_form: EntropyForm,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// fig-compare, fig-aucn, fig-theory, fig-msem, bloom-baseline or custom.
    preset: String,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let exec = if cli.global.sequential {
        Exec::Sequential
    } else {
        Exec::default()
    };
    let g = &cli.global;
    match &cli.command {
        Command::Gen(a) => gen(g, a, exec),
        Command::Enroll(a) => enroll(g, a, exec),
        Command::Verify(a) => verify(g, a, exec),
        Command::Roc(a) => roc(g, a),
        Command::Attack(a) => attack(g, a),
        Command::BloomTune(a) => bloom_tune(g, a, exec),
        Command::Experiment(a) => experiment(g, a, exec),
    }
}

fn gen(g: &Global, a: &GenArgs, exec: Exec) -> Result<()> {
    let mut out = open_out(g.out.as_deref())?;
    match &a.from {
        None => {
            let set = gen_signatures_with(a.n, a.d, a.sigma_x, g.seed, exec)?;
            let index: Vec<usize> = (0..a.n).collect();
            write_vectors(&mut out, &index, set.matrix())?;
        }
        Some(path) => {
            let src = read_vectors(path)?;
            let m = src.set.matrix();
            let mut noisy = DMatrix::zeros(m.nrows(), m.ncols());
            for j in 0..m.ncols() {
                let y = gen_query(&src.set.column(j), a.sigma_n, g.seed.wrapping_add(j as u64))?;
                noisy.set_column(j, &y);
            }
            write_vectors(&mut out, &src.index, &noisy)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn enroll(g: &Global, a: &EnrollArgs, exec: Exec) -> Result<()> {
    let file = read_vectors(&a.signatures)?;
    let set = file.set;
    let d = set.dim();
    let w = make_transform(d, a.l.unwrap_or(d), g.seed)?;
    let cfg = ExperimentConfig {
        seed: g.seed,
        d,
        n: set.count(),
        m: a.m,
        partitioner: a.partitioner,
        ..ExperimentConfig::default()
    };
    let assignment = partition_for(&cfg, &set, exec)?;
    let query_lambda = a.sigma_x * lambda_from_sparsity(a.sparsity, 1.0)?;
    let mut reps = Vec::new();
    for (k, idx) in assignment.members().iter().enumerate() {
        let group = set.select(idx)?;
        let rep = group_representative_at_sparsity(
            a.scheme,
            &group,
            &w,
            a.sparsity,
            a.sigma_x,
            a.normalize,
        )?;
        reps.push(RepRecord {
            group: k,
            size: idx.len(),
            transform_seed: g.seed,
            query_lambda,
            lambda: rep.lambda,
            sigma: rep.sigma,
            rank_deficient: rep.rank_deficient,
            code: rep.code,
        });
    }
    let mut out = open_out(g.out.as_deref())?;
    write_reps(&mut out, &reps)?;
    out.flush()?;
    if let Some(path) = &a.assignment {
        let mut f = open_out(Some(path))?;
        assignment.write_csv(&mut f)?;
        f.flush()?;
    }
    Ok(())
}

fn verify(g: &Global, a: &VerifyArgs, exec: Exec) -> Result<()> {
    let reps = read_reps(&a.reps)?;
    let first = &reps[0];
    if reps
        .iter()
        .any(|r| r.transform_seed != first.transform_seed || r.query_lambda != first.query_lambda)
    {
        bail!("representatives disagree on transform seed or query threshold");
    }
    let queries = read_vectors(&a.queries)?;
    let w = make_transform(queries.set.dim(), first.code.len(), first.transform_seed)
        .context("rebuilding the transform")?;
    let z = w.project_columns(queries.set.matrix(), exec)?;
    let codes = threshold_columns(&z, first.query_lambda, exec);
    let rep_codes: Vec<_> = reps.iter().map(|r| r.code.clone()).collect();
    let scores = gmv_core::verification::score_matrix(&codes, &rep_codes, exec)?;

    let mut out = open_out(g.out.as_deref())?;
    writeln!(out, "index,score,group,accept")?;
    for (i, row) in scores.iter().enumerate() {
        let (best, score) = row
            .iter()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |acc, (k, &s)| if s > acc.1 { (k, s) } else { acc },
            );
        writeln!(
            out,
            "{},{},{},{}",
            queries.index[i],
            fmt_f64(score),
            reps[best].group,
            decide(score, a.tau)
        )?;
    }
    out.flush()?;
    Ok(())
}

fn roc(g: &Global, a: &RocArgs) -> Result<()> {
    let curve = roc_curve(&read_scores(&a.pos)?, &read_scores(&a.neg)?)?;
    let mut out = open_out(g.out.as_deref())?;
    curve.write_csv(&mut out)?;
    out.flush()?;
    Ok(())
}

fn attack(g: &Global, a: &AttackArgs) -> Result<()> {
    let set = read_vectors(&a.signatures)?.set;
    let w = make_transform(set.dim(), set.dim(), g.seed)?;
    let schemes = if a.schemes.is_empty() {
        AggregationScheme::ALL.to_vec()
    } else {
        a.schemes.clone()
    };
    let reports = schemes
        .iter()
        .map(|&s| attack_group(s, &set, &w, a.sparsity, a.sigma_x, a.normalize))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let mut out = open_out(g.out.as_deref())?;
    write_attack_csv(&mut out, &reports)?;
    out.flush()?;
    Ok(())
}

fn bloom_tune(g: &Global, a: &BloomArgs, exec: Exec) -> Result<()> {
    let grid = TuneGrid {
        lambda_step: a.lambda_step,
        l_max: a.l_max,
        entropy_form: a.entropy_form,
        ..TuneGrid::default()
    };
    let params = tune(
        a.n, a.p_fp, a.h, a.epsilon, a.sigma_x, a.sigma_n, &grid, exec,
    )?;
    let mut out = open_out(g.out.as_deref())?;
    params.write_csv(&mut out)?;
    out.flush()?;
    Ok(())
}

fn experiment(g: &Global, a: &ExperimentArgs, exec: Exec) -> Result<()> {
    let overrides = g.config.as_deref().map(read_text).transpose()?;
    let configs = if a.preset == "custom" {
        let text = overrides.context("the custom experiment needs --config")?;
        let mut cfg = ExperimentConfig {
            seed: g.seed,
            ..ExperimentConfig::default()
        };
        cfg.apply_text(&text)?;
        vec![cfg.scaled(g.scale, false)?]
    } else {
        let preset: Preset = a.preset.parse()?;
        let mut configs = preset_configs(preset, g.seed, g.scale)?;
        if let Some(text) = overrides {
            for cfg in &mut configs {
                cfg.apply_text(&text)?;
            }
        }
        configs
    };
    let mut rows = Vec::new();
    for cfg in &configs {
        rows.extend(run_experiment(cfg, exec)?);
    }
    let mut out = open_out(g.out.as_deref())?;
    write_results(&mut out, &rows)?;
    out.flush()?;
    Ok(())
}
