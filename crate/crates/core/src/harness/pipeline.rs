//! End-to-end experiment runner for one configuration.

use std::io::Write;

use nalgebra::DVector;

use crate::aggregation::{
    pool_codes, raw_aggregate, rms, AggregationScheme, Representative, SignatureSet,
};
use crate::attack::{
    empirical_mse_e, mse_closed_form, mse_enrolled_closed_form, reconstruct, scaling_attack_bound,
};
use crate::bloom::{bloom_enroll, tune, BloomParams, TuneGrid};
use crate::embedding::{
    lambda_from_sparsity, make_transform, threshold, threshold_columns, TernaryCode,
    TransformMatrix,
};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::format::fmt_f64;
use crate::harness::config::ExperimentConfig;
use crate::harness::data::{gen_query_set, gen_signatures_with, QuerySet};
use crate::partition::{kmeans, random_partition, GroupAssignment, Partitioner};
use crate::rng::derive_key;
use crate::verification::{auc_mann_whitney, predicted_roc, score_matrix, tpr_at_fpr, GroupScores};

/// False-positive rate at which the true-positive rate is reported.
pub const REPORT_FPR: f64 = 1e-2;

const BLOOM_TAG: u64 = 0x62_6c6f_6f6d;

/// One (scheme, sparsity) cell of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    /// Scheme name, or `bloom`.
    pub scheme: String,
    pub partitioner: Partitioner,
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub l: usize,
    pub s_frac: f64,
    pub lambda: f64,
    pub sigma_x: f64,
    pub auc: f64,
    pub auc_theory: f64,
    pub ptp_at_fpr: f64,
    pub mse_embedding: f64,
    pub mse_enrolled_empirical: f64,
    pub mse_enrolled_theory: f64,
    pub lower_bound: f64,
    pub n_min: usize,
    pub rank_deficient_groups: usize,
    pub note: String,
}

pub const RESULT_CSV_HEADER: &str = "scheme,partitioner,N,M,d,l,s_frac,lambda,auc,auc_theory,\
ptp_at_fp_1e-2,mse_embedding,mse_embedding_norm,mse_enrolled_empirical,\
mse_enrolled_empirical_norm,mse_enrolled_theory,lower_bound,n_min,rank_deficient_groups,note";

impl ResultRow {
    pub fn csv_row(&self) -> String {
        let var = self.sigma_x * self.sigma_x;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.scheme,
            self.partitioner,
            self.n,
            self.m,
            self.d,
            self.l,
            fmt_f64(self.s_frac),
            fmt_f64(self.lambda),
            fmt_f64(self.auc),
            fmt_f64(self.auc_theory),
            fmt_f64(self.ptp_at_fpr),
            fmt_f64(self.mse_embedding),
            fmt_f64(self.mse_embedding / var),
            fmt_f64(self.mse_enrolled_empirical),
            fmt_f64(self.mse_enrolled_empirical / var),
            fmt_f64(self.mse_enrolled_theory),
            fmt_f64(self.lower_bound),
            self.n_min,
            self.rank_deficient_groups,
            self.note.replace(',', ";"),
        )
    }
}

pub fn write_results<W: Write>(w: &mut W, rows: &[ResultRow]) -> Result<()> {
    writeln!(w, "{RESULT_CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

/// Partition of the enrolled signatures prescribed by `cfg`.
pub fn partition_for(
    cfg: &ExperimentConfig,
    g: &SignatureSet,
    exec: Exec,
) -> Result<GroupAssignment> {
    if cfg.m == 1 {
        return Ok(GroupAssignment::single(g.count()));
    }
    match cfg.partitioner {
        Partitioner::Random => random_partition(g.count(), cfg.m, cfg.seed),
        Partitioner::Kmeans => Ok(kmeans(g, cfg.m, cfg.seed, cfg.max_iters, exec)?.assignment),
    }
}

/// Shared state of one experiment, computed once and reused by every cell.
struct Prepared<'a> {
    cfg: &'a ExperimentConfig,
    exec: Exec,
    g: SignatureSet,
    w: TransformMatrix,
    assignment: GroupAssignment,
    members: Vec<Vec<usize>>,
    groups: Vec<SignatureSet>,
    queries: QuerySet,
    home: Vec<usize>,
    z_enrolled: nalgebra::DMatrix<f64>,
    z_related: nalgebra::DMatrix<f64>,
    z_unrelated: nalgebra::DMatrix<f64>,
}

impl<'a> Prepared<'a> {
    fn new(cfg: &'a ExperimentConfig, exec: Exec) -> Result<Self> {
        cfg.validate()?;
        let g = gen_signatures_with(cfg.n, cfg.d, cfg.sigma_x, cfg.seed, exec)?;
        let w = make_transform(cfg.d, cfg.code_len(), cfg.seed)?;
        let assignment = partition_for(cfg, &g, exec)?;
        let members = assignment.members();
        let groups = members
            .iter()
            .map(|idx| g.select(idx))
            .collect::<Result<Vec<_>>>()?;
        let queries = gen_query_set(
            &g,
            cfg.trials_pos,
            cfg.trials_neg,
            cfg.sigma_x,
            cfg.sigma_n,
            cfg.seed,
            exec,
        )?;
        let home = queries
            .source
            .iter()
            .map(|&j| assignment.labels()[j])
            .collect();
        let z_enrolled = w.project_columns(g.matrix(), exec)?;
        let z_related = w.project_columns(&queries.related, exec)?;
        let z_unrelated = w.project_columns(&queries.unrelated, exec)?;
        Ok(Self {
            cfg,
            exec,
            g,
            w,
            assignment,
            members,
            groups,
            queries,
            home,
            z_enrolled,
            z_related,
            z_unrelated,
        })
    }

    /// `W a_k` for every group of a HoA scheme, with rank-deficiency flags.
    fn hoa_projections(&self, scheme: AggregationScheme) -> Result<Vec<(DVector<f64>, bool)>> {
        let normalize = self.cfg.normalize_signatures;
        self.exec
            .map(self.groups.len(), |k| -> Result<(DVector<f64>, bool)> {
                let g = &self.groups[k];
                let input = if normalize { g.normalized() } else { g.clone() };
                let agg = raw_aggregate(scheme, &input)?.expect("HoA scheme");
                Ok((self.w.project(&agg.vector)?, agg.rank_deficient))
            })
            .into_iter()
            .collect()
    }

    fn representatives(
        &self,
        scheme: AggregationScheme,
        hoa: Option<&[(DVector<f64>, bool)]>,
        unit_lambda: f64,
    ) -> Result<Vec<Representative>> {
        match hoa {
            Some(proj) => Ok(proj
                .iter()
                .map(|(z, rank_deficient)| {
                    let sigma = rms(z.as_slice());
                    let lambda = sigma * unit_lambda;
                    let code = if sigma > 0.0 {
                        threshold(z.as_slice(), lambda)
                    } else {
                        TernaryCode::zeros(z.len())
                    };
                    Representative {
                        code,
                        lambda,
                        sigma,
                        rank_deficient: *rank_deficient,
                    }
                })
                .collect()),
            None => {
                let lambda = self.cfg.sigma_x * unit_lambda;
                let codes = threshold_columns(&self.z_enrolled, lambda, self.exec);
                self.members
                    .iter()
                    .map(|idx| {
                        Ok(Representative {
                            code: pool_codes(scheme, idx.iter().map(|&j| &codes[j]))?,
                            lambda,
                            sigma: self.cfg.sigma_x,
                            rank_deficient: false,
                        })
                    })
                    .collect()
            }
        }
    }

    fn run_cell(
        &self,
        scheme: AggregationScheme,
        hoa: Option<&[(DVector<f64>, bool)]>,
        s_frac: f64,
    ) -> Result<ResultRow> {
        let cfg = self.cfg;
        let unit_lambda = lambda_from_sparsity(s_frac, 1.0)?;
        let lambda = cfg.sigma_x * unit_lambda;
        let reps = self.representatives(scheme, hoa, unit_lambda)?;
        let rep_codes: Vec<TernaryCode> = reps.iter().map(|r| r.code.clone()).collect();

        let q_related = threshold_columns(&self.z_related, lambda, self.exec);
        let q_unrelated = threshold_columns(&self.z_unrelated, lambda, self.exec);
        let s_related = score_matrix(&q_related, &rep_codes, self.exec)?;
        let s_unrelated = score_matrix(&q_unrelated, &rep_codes, self.exec)?;
        let row_max = |rows: &[Vec<f64>]| -> Vec<f64> {
            rows.iter()
                .map(|r| r.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
                .collect()
        };
        let pos = row_max(&s_related);
        let neg = row_max(&s_unrelated);
        let auc = auc_mann_whitney(&pos, &neg)?;
        let ptp = tpr_at_fpr(&pos, &neg, REPORT_FPR)?;

        let group_scores: Vec<GroupScores> = (0..reps.len())
            .map(|k| GroupScores {
                size: self.assignment.sizes()[k],
                neg: s_unrelated.iter().map(|r| r[k]).collect(),
                pos: s_related
                    .iter()
                    .zip(&self.home)
                    .filter(|(_, &h)| h == k)
                    .map(|(r, _)| r[k])
                    .collect(),
            })
            .collect();
        let auc_theory = predicted_roc(&group_scores, cfg.n)?.auc;

        let mse_embedding = mse_closed_form(lambda, cfg.sigma_x)?;
        let (mse_emp, mse_theory, lower_bound, note) = if cfg.attack && self.w.is_square() {
            let (emp, bound) = self.attack(scheme, &reps)?;
            let theory = if scheme == AggregationScheme::HoaSum && !cfg.normalize_signatures {
                let mut t = 0.0;
                for g in &self.groups {
                    t += g.count() as f64
                        * mse_enrolled_closed_form(lambda, cfg.sigma_x, g.count())?;
                }
                t / cfg.n as f64
            } else {
                f64::NAN
            };
            (emp, theory, bound, String::new())
        } else if cfg.attack {
            (
                f64::NAN,
                f64::NAN,
                f64::NAN,
                "attack needs a square transform".to_string(),
            )
        } else {
            (f64::NAN, f64::NAN, f64::NAN, String::new())
        };

        Ok(ResultRow {
            scheme: scheme.name().to_string(),
            partitioner: cfg.partitioner,
            n: cfg.n,
            m: cfg.m,
            d: cfg.d,
            l: self.w.rows(),
            s_frac,
            lambda,
            sigma_x: cfg.sigma_x,
            auc,
            auc_theory,
            ptp_at_fpr: ptp,
            mse_embedding,
            mse_enrolled_empirical: mse_emp,
            mse_enrolled_theory: mse_theory,
            lower_bound,
            n_min: self.assignment.n_min(),
            rank_deficient_groups: reps.iter().filter(|r| r.rank_deficient).count(),
            note,
        })
    }

    /// Size-weighted `MSE_e` and scaling bound over all groups.
    fn attack(&self, scheme: AggregationScheme, reps: &[Representative]) -> Result<(f64, f64)> {
        let per_group = self.exec.map(reps.len(), |k| -> Result<(f64, f64)> {
            let g = &self.groups[k];
            let rep = &reps[k];
            let n_k = g.count() as f64;
            let direction = if rep.sigma > 0.0 {
                reconstruct(&rep.code, &self.w, rep.lambda, rep.sigma)?
            } else {
                DVector::zeros(g.dim())
            };
            let (bound, kappa) = if direction.norm_squared() > 0.0 {
                let b = scaling_attack_bound(g, &direction)?;
                (b.lower_bound, b.kappa_star)
            } else {
                (g.matrix().norm_squared() / (g.dim() as f64 * n_k), 0.0)
            };
            let x_hat = if scheme == AggregationScheme::HoaSum && !self.cfg.normalize_signatures {
                &direction / n_k
            } else {
                &direction * kappa
            };
            Ok((n_k * empirical_mse_e(g, &x_hat)?, n_k * bound))
        });
        let (mut emp, mut bound) = (0.0, 0.0);
        for item in per_group {
            let (e, b) = item?;
            emp += e;
            bound += b;
        }
        let n = self.g.count() as f64;
        Ok((emp / n, bound / n))
    }

    fn bloom_row(&self) -> Result<ResultRow> {
        let cfg = self.cfg;
        let grid = TuneGrid {
            l_max: TuneGrid::default().l_max.min(cfg.d),
            entropy_form: cfg.entropy_form,
            ..TuneGrid::default()
        };
        let mut row = ResultRow {
            scheme: "bloom".into(),
            partitioner: cfg.partitioner,
            n: cfg.n,
            m: 1,
            d: cfg.d,
            l: 0,
            s_frac: f64::NAN,
            lambda: f64::NAN,
            sigma_x: cfg.sigma_x,
            auc: f64::NAN,
            auc_theory: f64::NAN,
            ptp_at_fpr: f64::NAN,
            mse_embedding: f64::NAN,
            mse_enrolled_empirical: f64::NAN,
            mse_enrolled_theory: f64::NAN,
            lower_bound: f64::NAN,
            n_min: cfg.n,
            rank_deficient_groups: 0,
            note: String::new(),
        };
        let params = match tune(
            cfg.n,
            cfg.bloom_p_fp,
            cfg.bloom_h,
            cfg.bloom_epsilon,
            cfg.sigma_x,
            cfg.sigma_n,
            &grid,
            self.exec,
        ) {
            Ok(p) => p,
            Err(Error::Infeasible(msg)) => {
                row.note = format!("infeasible: {msg}");
                return Ok(row);
            }
            Err(e) => return Err(e),
        };
        let rates = bloom_rates(&params, &self.g, &self.queries, cfg.seed, self.exec)?;
        row.l = params.l;
        row.lambda = params.lambda;
        row.s_frac = 2.0 * params.stats.p;
        row.auc = 0.5 * (1.0 + rates.p_tp - rates.p_fp);
        let tp_theory = params.stats.pi + (1.0 - params.stats.pi) * cfg.bloom_p_fp;
        row.auc_theory = 0.5 * (1.0 + tp_theory - cfg.bloom_p_fp);
        row.ptp_at_fpr = rates.p_tp;
        row.mse_embedding = mse_closed_form(params.lambda, cfg.sigma_x)?;
        row.note = format!(
            "l_b={} k={} H={} pi0={} pi={} p_fp_empirical={}",
            params.l_b,
            params.k_hashes,
            fmt_f64(params.stats.entropy),
            fmt_f64(params.stats.pi0),
            fmt_f64(params.stats.pi),
            fmt_f64(rates.p_fp)
        );
        Ok(row)
    }
}

/// Empirical operating point of a tuned Bloom filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BloomRates {
    pub p_tp: f64,
    pub p_fp: f64,
    /// Fraction of related queries whose code equals the enrolled one.
    pub code_survival: f64,
}

/// Enrolls `g` in a filter built from `params` and runs the query set.
pub fn bloom_rates(
    params: &BloomParams,
    g: &SignatureSet,
    queries: &QuerySet,
    seed: u64,
    exec: Exec,
) -> Result<BloomRates> {
    let w = make_transform(g.dim(), params.l, derive_key(seed, &[BLOOM_TAG]))?;
    let enrolled = threshold_columns(&w.project_columns(g.matrix(), exec)?, params.lambda, exec);
    let filter = bloom_enroll(&enrolled, params, derive_key(seed, &[BLOOM_TAG, 1]))?;
    let related = threshold_columns(
        &w.project_columns(&queries.related, exec)?,
        params.lambda,
        exec,
    );
    let unrelated = threshold_columns(
        &w.project_columns(&queries.unrelated, exec)?,
        params.lambda,
        exec,
    );
    let mut tp = 0usize;
    let mut same = 0usize;
    for (q, &j) in related.iter().zip(&queries.source) {
        tp += filter.contains(q)? as usize;
        same += (*q == enrolled[j]) as usize;
    }
    let mut fp = 0usize;
    for q in &unrelated {
        fp += filter.contains(q)? as usize;
    }
    Ok(BloomRates {
        p_tp: tp as f64 / related.len() as f64,
        p_fp: fp as f64 / unrelated.len() as f64,
        code_survival: same as f64 / related.len() as f64,
    })
}

/// Runs every (scheme, sparsity) cell of `cfg`, then the Bloom row if
/// requested. Rows come out in configuration order.
pub fn run_experiment(cfg: &ExperimentConfig, exec: Exec) -> Result<Vec<ResultRow>> {
    let prep = Prepared::new(cfg, exec)?;
    let mut rows = Vec::new();
    for &scheme in &cfg.schemes {
        let hoa = if scheme.aggregates_first() {
            Some(prep.hoa_projections(scheme)?)
        } else {
            None
        };
        for s in cfg.sparsities_for(scheme) {
            rows.push(prep.run_cell(scheme, hoa.as_deref(), s)?);
        }
    }
    if cfg.bloom {
        rows.push(prep.bloom_row()?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            d: 64,
            n: 16,
            trials_pos: 200,
            trials_neg: 200,
            sparsity_grid: vec![0.3, 0.7],
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn noiseless_single_member_is_perfect() {
        let cfg = ExperimentConfig {
            n: 1,
            sigma_n: 0.0,
            ..small()
        };
        for row in run_experiment(&cfg, Exec::default()).unwrap() {
            assert_eq!(row.auc, 1.0, "{}", row.scheme);
            assert_eq!(row.ptp_at_fpr, 1.0);
        }
    }

    #[test]
    fn rows_follow_the_grid() {
        let cfg = ExperimentConfig {
            scheme_sparsity: vec![(AggregationScheme::AohMajority, 0.5)],
            ..small()
        };
        let rows = run_experiment(&cfg, Exec::default()).unwrap();
        let keys: Vec<_> = rows.iter().map(|r| (r.scheme.as_str(), r.s_frac)).collect();
        assert_eq!(
            keys,
            vec![
                ("hoa-sum", 0.3),
                ("hoa-sum", 0.7),
                ("hoa-pinv", 0.3),
                ("hoa-pinv", 0.7),
                ("aoh-sign-sum", 0.3),
                ("aoh-sign-sum", 0.7),
                ("aoh-majority", 0.5)
            ]
        );
        for r in &rows {
            assert!(r.auc > 0.5 && r.auc <= 1.0);
            assert!(r.mse_enrolled_empirical >= r.lower_bound - 1e-12);
            assert_eq!(r.mse_enrolled_theory.is_nan(), r.scheme != "hoa-sum");
        }
    }

    #[test]
    fn single_group_theory_equals_empirical() {
        for row in run_experiment(&small(), Exec::default()).unwrap() {
            assert!((row.auc - row.auc_theory).abs() < 1e-9, "{}", row.scheme);
        }
    }

    #[test]
    fn output_is_identical_across_strategies() {
        let cfg = ExperimentConfig {
            m: 4,
            partitioner: Partitioner::Kmeans,
            schemes: vec![AggregationScheme::HoaPinv, AggregationScheme::AohSignSum],
            ..small()
        };
        let render = |exec| {
            let mut buf = Vec::new();
            write_results(&mut buf, &run_experiment(&cfg, exec).unwrap()).unwrap();
            buf
        };
        let a = render(Exec::Sequential);
        assert_eq!(a, render(Exec::default()));
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with(RESULT_CSV_HEADER));
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn bloom_row_is_reported() {
        let cfg = ExperimentConfig {
            d: 256,
            n: 8,
            schemes: vec![],
            bloom: true,
            ..small()
        };
        let rows = run_experiment(&cfg, Exec::default()).unwrap();
        assert_eq!(rows.len(), 1);
        let r = &rows[0];
        assert_eq!(r.scheme, "bloom");
        assert!(r.l >= 8 && r.l <= 256, "{:?}", r);
        assert!(r.auc > 0.5);

        let tiny = ExperimentConfig { d: 8, ..cfg };
        let rows = run_experiment(&tiny, Exec::default()).unwrap();
        assert!(rows[0].note.starts_with("infeasible"));
        assert!(rows[0].auc.is_nan());
    }
}
