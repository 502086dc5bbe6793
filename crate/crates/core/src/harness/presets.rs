//! Named experiment grids.

use std::fmt;
use std::str::FromStr;

use crate::aggregation::AggregationScheme;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::harness::config::ExperimentConfig;
use crate::harness::pipeline::{run_experiment, ResultRow};
use crate::partition::Partitioner;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Single group, AUC against embedding MSE for every scheme and S/d,
    /// plus the Bloom filter.
    FigCompare,
    /// Single group, AUC and p_tp against N.
    FigAucN,
    /// Multiple groups, empirical and predicted AUC against n_min.
    FigTheory,
    /// Multiple groups, MSE_e against n_min.
    FigMseM,
    /// Tuned Bloom filter alone.
    BloomBaseline,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::FigCompare,
        Preset::FigAucN,
        Preset::FigTheory,
        Preset::FigMseM,
        Preset::BloomBaseline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::FigCompare => "fig-compare",
            Preset::FigAucN => "fig-aucn",
            Preset::FigTheory => "fig-theory",
            Preset::FigMseM => "fig-msem",
            Preset::BloomBaseline => "bloom-baseline",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s.trim())
            .ok_or_else(|| Error::Parse(format!("unknown preset '{s}'")))
    }
}

/// Group counts swept by the multi-group presets.
pub const GROUP_COUNTS: [usize; 7] = [8, 16, 32, 64, 128, 256, 512];
/// Enrolled counts swept by `fig-aucn`.
pub const ENROLLED_COUNTS: [usize; 5] = [16, 64, 256, 1024, 4096];

fn base(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        seed,
        d: 1024,
        sigma_x: 1.0,
        sigma_n: 0.1,
        ..ExperimentConfig::default()
    }
}

fn multi_group(seed: u64, partitioner: Partitioner, m: usize) -> ExperimentConfig {
    ExperimentConfig {
        n: 4096,
        m,
        partitioner,
        schemes: vec![AggregationScheme::HoaPinv, AggregationScheme::AohSignSum],
        scheme_sparsity: vec![
            (AggregationScheme::HoaPinv, 0.6),
            (AggregationScheme::AohSignSum, 0.85),
        ],
        ..base(seed)
    }
}

/// The configurations a preset runs, in output order. `scale` shrinks
/// trial counts everywhere and N where N is not the swept axis.
pub fn preset_configs(preset: Preset, seed: u64, scale: f64) -> Result<Vec<ExperimentConfig>> {
    let configs = match preset {
        Preset::FigCompare => vec![ExperimentConfig {
            n: 128,
            bloom: true,
            ..base(seed)
        }],
        Preset::FigAucN => ENROLLED_COUNTS
            .iter()
            .map(|&n| ExperimentConfig {
                n,
                sparsity_grid: vec![0.2, 0.6],
                ..base(seed)
            })
            .collect(),
        Preset::FigTheory | Preset::FigMseM => [Partitioner::Random, Partitioner::Kmeans]
            .into_iter()
            .flat_map(|p| GROUP_COUNTS.iter().map(move |&m| multi_group(seed, p, m)))
            .collect(),
        Preset::BloomBaseline => vec![ExperimentConfig {
            n: 128,
            schemes: vec![],
            bloom: true,
            ..base(seed)
        }],
    };
    let keep_n = preset == Preset::FigAucN;
    configs
        .iter()
        .map(|c| {
            let mut s = c.scaled(scale, keep_n)?;
            s.m = s.m.min(s.n);
            Ok(s)
        })
        .collect()
}

pub fn run_preset(preset: Preset, seed: u64, scale: f64, exec: Exec) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    for cfg in preset_configs(preset, seed, scale)? {
        rows.extend(run_experiment(&cfg, exec)?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
        assert!("fig-9".parse::<Preset>().is_err());
    }

    #[test]
    fn presets_pin_their_parameters() {
        let c = preset_configs(Preset::FigCompare, 1, 1.0).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!((c[0].n, c[0].d, c[0].m), (128, 1024, 1));
        assert!((c[0].sigma_n * c[0].sigma_n - 0.01).abs() < 1e-15);
        assert_eq!(c[0].sparsity_grid.len(), 9);
        assert!(c[0].bloom);

        let t = preset_configs(Preset::FigTheory, 1, 1.0).unwrap();
        assert_eq!(t.len(), 2 * GROUP_COUNTS.len());
        assert!(t.iter().all(|c| c.n == 4096));
        assert_eq!(t[0].sparsities_for(AggregationScheme::HoaPinv), vec![0.6]);
        assert_eq!(
            t[0].sparsities_for(AggregationScheme::AohSignSum),
            vec![0.85]
        );

        let a = preset_configs(Preset::FigAucN, 1, 0.1).unwrap();
        let ns: Vec<_> = a.iter().map(|c| c.n).collect();
        assert_eq!(ns, ENROLLED_COUNTS.to_vec());
        assert!(a.iter().all(|c| c.trials_pos == 200));

        let s = preset_configs(Preset::FigTheory, 1, 0.5).unwrap();
        assert!(s.iter().all(|c| c.n == 2048 && c.trials_neg == 1000));
    }
}
