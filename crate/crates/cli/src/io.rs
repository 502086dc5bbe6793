//! Flat-file formats used by the subcommands.

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use gmv_core::format::fmt_f64;
use gmv_core::{SignatureSet, TernaryCode};
use nalgebra::DMatrix;

/// Output sink: a file if `--out` was given, stdout otherwise.
pub fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))
}

/// Vectors stored one per row as `index,x0,x1,...`.
pub struct VectorFile {
    pub index: Vec<usize>,
    pub set: SignatureSet,
}

pub fn write_vectors<W: Write>(w: &mut W, index: &[usize], m: &DMatrix<f64>) -> Result<()> {
    let header: Vec<String> = (0..m.nrows()).map(|i| format!("x{i}")).collect();
    writeln!(w, "index,{}", header.join(","))?;
    for (j, col) in m.column_iter().enumerate() {
        let vals: Vec<String> = col.iter().map(|v| fmt_f64(*v)).collect();
        writeln!(w, "{},{}", index[j], vals.join(","))?;
    }
    Ok(())
}

pub fn read_vectors(path: &Path) -> Result<VectorFile> {
    let mut rdr = reader(path)?;
    let d = rdr.headers()?.len().checked_sub(1).filter(|&d| d > 0);
    let d = d.ok_or_else(|| anyhow!("{}: expected index,x0,... columns", path.display()))?;
    let mut index = Vec::new();
    let mut data = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        index.push(
            rec[0]
                .parse()
                .with_context(|| format!("row {}: bad index", row + 1))?,
        );
        for field in rec.iter().skip(1) {
            data.push(
                field
                    .parse::<f64>()
                    .with_context(|| format!("row {}: bad value '{field}'", row + 1))?,
            );
        }
    }
    if index.is_empty() {
        bail!("{}: no rows", path.display());
    }
    let set = SignatureSet::new(DMatrix::from_vec(d, index.len(), data))?;
    Ok(VectorFile { index, set })
}

pub fn code_to_string(code: &TernaryCode) -> String {
    code.symbols()
        .iter()
        .map(|&s| match s {
            1 => '+',
            -1 => '-',
            _ => '0',
        })
        .collect()
}

pub fn code_from_string(s: &str) -> Result<TernaryCode> {
    let symbols = s
        .chars()
        .map(|c| match c {
            '+' => Ok(1),
            '-' => Ok(-1),
            '0' => Ok(0),
            other => Err(anyhow!("invalid code symbol '{other}'")),
        })
        .collect::<Result<Vec<i8>>>()?;
    Ok(TernaryCode::new(symbols)?)
}

/// One enrolled group representative.
#[derive(Debug, Clone, PartialEq)]
pub struct RepRecord {
    pub group: usize,
    pub size: usize,
    pub transform_seed: u64,
    pub query_lambda: f64,
    pub lambda: f64,
    pub sigma: f64,
    pub rank_deficient: bool,
    pub code: TernaryCode,
}

pub const REPS_HEADER: &str =
    "group,size,transform_seed,query_lambda,lambda,sigma,rank_deficient,code";

pub fn write_reps<W: Write>(w: &mut W, reps: &[RepRecord]) -> Result<()> {
    writeln!(w, "{REPS_HEADER}")?;
    for r in reps {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.group,
            r.size,
            r.transform_seed,
            fmt_f64(r.query_lambda),
            fmt_f64(r.lambda),
            fmt_f64(r.sigma),
            r.rank_deficient,
            code_to_string(&r.code)
        )?;
    }
    Ok(())
}

pub fn read_reps(path: &Path) -> Result<Vec<RepRecord>> {
    let mut rdr = reader(path)?;
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 8 {
            bail!(
                "{}: row {} has {} fields, expected 8",
                path.display(),
                row + 1,
                rec.len()
            );
        }
        let ctx = || format!("{}: row {}", path.display(), row + 1);
        out.push(RepRecord {
            group: rec[0].parse().with_context(ctx)?,
            size: rec[1].parse().with_context(ctx)?,
            transform_seed: rec[2].parse().with_context(ctx)?,
            query_lambda: rec[3].parse().with_context(ctx)?,
            lambda: rec[4].parse().with_context(ctx)?,
            sigma: rec[5].parse().with_context(ctx)?,
            rank_deficient: rec[6].parse().with_context(ctx)?,
            code: code_from_string(&rec[7]).with_context(ctx)?,
        });
    }
    if out.is_empty() {
        bail!("{}: no representatives", path.display());
    }
    Ok(out)
}

/// The `score` column of a CSV file.
pub fn read_scores(path: &Path) -> Result<Vec<f64>> {
    let mut rdr = reader(path)?;
    let col = rdr
        .headers()?
        .iter()
        .position(|h| h == "score")
        .ok_or_else(|| anyhow!("{}: no 'score' column", path.display()))?;
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            rec[col]
                .parse::<f64>()
                .with_context(|| format!("{}: bad score '{}'", path.display(), &rec[col]))
        })
        .collect()
}

pub fn read_text(path: &Path) -> Result<String> {
    let mut s = String::new();
    File::open(path)
        .with_context(|| format!("opening {}", path.display()))?
        .read_to_string(&mut s)?;
    Ok(s)
}
