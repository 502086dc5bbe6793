//! Splitting the enrolled signatures into groups.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::aggregation::SignatureSet;
use crate::error::{domain_err, shape_err, Error, Result};
use crate::exec::Exec;
use crate::rng::substream;

/// Group label per signature plus the group sizes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupAssignment {
    labels: Vec<usize>,
    sizes: Vec<usize>,
}

impl GroupAssignment {
    pub fn from_labels(labels: Vec<usize>, groups: usize) -> Result<Self> {
        if groups == 0 {
            return Err(domain_err("at least one group is required"));
        }
        let mut sizes = vec![0; groups];
        for &l in &labels {
            if l >= groups {
                return Err(shape_err(format!("label {l} out of {groups} groups")));
            }
            sizes[l] += 1;
        }
        Ok(GroupAssignment { labels, sizes })
    }

    /// Everybody in group 0.
    pub fn single(n: usize) -> Self {
        GroupAssignment {
            labels: vec![0; n],
            sizes: vec![n],
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn groups(&self) -> usize {
        self.sizes.len()
    }

    /// Size of the smallest group, the k of k-anonymity.
    pub fn n_min(&self) -> usize {
        self.sizes.iter().copied().min().unwrap_or(0)
    }

    /// Member indices of every group, in increasing index order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = self.sizes.iter().map(|&s| Vec::with_capacity(s)).collect();
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    /// CSV with header `index,group_id`.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "index,group_id")?;
        for (i, l) in self.labels.iter().enumerate() {
            writeln!(w, "{i},{l}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Partitioner {
    Random,
    Kmeans,
}

impl Partitioner {
    pub fn name(self) -> &'static str {
        match self {
            Partitioner::Random => "random",
            Partitioner::Kmeans => "kmeans",
        }
    }
}

impl fmt::Display for Partitioner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Partitioner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "random" => Ok(Partitioner::Random),
            "kmeans" | "k-means" => Ok(Partitioner::Kmeans),
            _ => Err(Error::Parse(format!("unknown partitioner '{s}'"))),
        }
    }
}

fn check_groups(n: usize, m: usize) -> Result<()> {
    if m == 0 || m > n {
        return Err(domain_err(format!(
            "group count {m} must satisfy 1 <= M <= N = {n}"
        )));
    }
    Ok(())
}

/// Seeded uniform assignment into groups whose sizes differ by at most one.
pub fn random_partition(n: usize, m: usize, seed: u64) -> Result<GroupAssignment> {
    check_groups(n, m)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(seed, &[0x7061_7274, n as u64, m as u64]));
    let mut labels = vec![0; n];
    for (slot, &i) in order.iter().enumerate() {
        labels[i] = slot % m;
    }
    GroupAssignment::from_labels(labels, m)
}

pub const DEFAULT_KMEANS_ITERS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub assignment: GroupAssignment,
    /// d × M, the mean of each final group.
    pub centroids: DMatrix<f64>,
    /// Objective after each assignment step, starting with the seeding.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// Stops when an assignment step changes no label or after `max_iters`
/// centroid updates. A group left empty by an assignment step takes the
/// point farthest from its own centroid (among groups with at least two
/// members), so the result always has M non-empty groups.
pub fn kmeans(
    g: &SignatureSet,
    m: usize,
    seed: u64,
    max_iters: usize,
    exec: Exec,
) -> Result<KMeans> {
    let n = g.count();
    check_groups(n, m)?;
    let x = g.matrix();
    let sq_norms: Vec<f64> = x.column_iter().map(|c| c.norm_squared()).collect();

    let mut centroids = seed_plus_plus(x, m, seed, exec);
    let mut labels = assign(x, &sq_norms, &centroids, exec);
    repair_empty(x, &mut labels, &mut centroids);
    let mut trace = vec![objective(x, &labels, &centroids, exec)];

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iters {
        iterations += 1;
        update_centroids(x, &labels, &mut centroids);
        let mut next = assign(x, &sq_norms, &centroids, exec);
        repair_empty(x, &mut next, &mut centroids);
        trace.push(objective(x, &next, &centroids, exec));
        if next == labels {
            converged = true;
            break;
        }
        labels = next;
    }
    update_centroids(x, &labels, &mut centroids);

    Ok(KMeans {
        assignment: GroupAssignment::from_labels(labels, m)?,
        centroids,
        objective_trace: trace,
        iterations,
        converged,
    })
}

pub fn kmeans_partition(
    g: &SignatureSet,
    m: usize,
    seed: u64,
    max_iters: usize,
) -> Result<GroupAssignment> {
    Ok(kmeans(g, m, seed, max_iters, Exec::default())?.assignment)
}

fn squared_distance_to(x: &DMatrix<f64>, j: usize, c: &DVector<f64>) -> f64 {
    x.column(j)
        .iter()
        .zip(c.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

fn seed_plus_plus(x: &DMatrix<f64>, m: usize, seed: u64, exec: Exec) -> DMatrix<f64> {
    let (d, n) = x.shape();
    let mut rng = substream(seed, &[0x6b6d_6561_6e73, n as u64, m as u64]);
    let mut centroids = DMatrix::zeros(d, m);
    let first = rng.random_range(0..n);
    centroids.set_column(0, &x.column(first));
    let mut nearest = {
        let c0 = centroids.column(0).into_owned();
        exec.map(n, |j| squared_distance_to(x, j, &c0))
    };
    for k in 1..m {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (j, &w) in nearest.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    chosen = Some(j);
                    break;
                }
            }
            // rounding can leave target == total; fall back to the last positive weight
            chosen.unwrap_or_else(|| nearest.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            rng.random_range(0..n)
        };
        centroids.set_column(k, &x.column(pick));
        let ck = centroids.column(k).into_owned();
        let fresh = exec.map(n, |j| squared_distance_to(x, j, &ck));
        for (a, b) in nearest.iter_mut().zip(fresh) {
            *a = a.min(b);
        }
    }
    centroids
}

fn assign(x: &DMatrix<f64>, sq_norms: &[f64], centroids: &DMatrix<f64>, exec: Exec) -> Vec<usize> {
    const BLOCK: usize = 256;
    let n = x.ncols();
    let c_norms: Vec<f64> = centroids.column_iter().map(|c| c.norm_squared()).collect();
    let blocks = n.div_ceil(BLOCK);
    exec.map(blocks, |b| {
        let start = b * BLOCK;
        let width = BLOCK.min(n - start);
        // width × M inner products
        let cross = x.columns(start, width).tr_mul(centroids);
        (0..width)
            .map(|i| {
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (k, &cn) in c_norms.iter().enumerate() {
                    let dist = sq_norms[start + i] - 2.0 * cross[(i, k)] + cn;
                    if dist < best_d {
                        best_d = dist;
                        best = k;
                    }
                }
                best
            })
            .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect()
}

fn repair_empty(x: &DMatrix<f64>, labels: &mut [usize], centroids: &mut DMatrix<f64>) {
    let m = centroids.ncols();
    let mut sizes = vec![0usize; m];
    for &l in labels.iter() {
        sizes[l] += 1;
    }
    for empty in 0..m {
        if sizes[empty] > 0 {
            continue;
        }
        let mut far = None;
        let mut far_d = -1.0;
        for (j, &l) in labels.iter().enumerate() {
            if sizes[l] < 2 {
                continue;
            }
            let dist = squared_distance_to(x, j, &centroids.column(l).into_owned());
            if dist > far_d {
                far_d = dist;
                far = Some(j);
            }
        }
        let j = far.expect("M <= N leaves a group with two members");
        sizes[labels[j]] -= 1;
        labels[j] = empty;
        sizes[empty] = 1;
        centroids.set_column(empty, &x.column(j));
    }
}

fn update_centroids(x: &DMatrix<f64>, labels: &[usize], centroids: &mut DMatrix<f64>) {
    let m = centroids.ncols();
    let mut sums = DMatrix::zeros(x.nrows(), m);
    let mut counts = vec![0usize; m];
    for (j, &l) in labels.iter().enumerate() {
        let mut col = sums.column_mut(l);
        col += x.column(j);
        counts[l] += 1;
    }
    for (k, &count) in counts.iter().enumerate() {
        if count > 0 {
            centroids.set_column(k, &(sums.column(k) / count as f64));
        }
    }
}

fn objective(x: &DMatrix<f64>, labels: &[usize], centroids: &DMatrix<f64>, exec: Exec) -> f64 {
    exec.map(labels.len(), |j| {
        squared_distance_to(x, j, &centroids.column(labels[j]).into_owned())
    })
    .into_iter()
    .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::fill_gaussian;

    fn gaussian(d: usize, n: usize, seed: u64) -> DMatrix<f64> {
        let mut data = vec![0.0; d * n];
        fill_gaussian(&mut substream(seed, &[]), 1.0, &mut data);
        DMatrix::from_vec(d, n, data)
    }

    #[test]
    fn random_partition_examples() {
        let a = random_partition(8, 4, 1).unwrap();
        assert_eq!(a.sizes(), &[2, 2, 2, 2]);
        assert_eq!(a.n_min(), 2);
        let one = random_partition(5, 1, 1).unwrap();
        assert_eq!(one.sizes(), &[5]);
        assert!(one.labels().iter().all(|&l| l == 0));
        assert_eq!(
            random_partition(100, 7, 3).unwrap(),
            random_partition(100, 7, 3).unwrap()
        );
        assert_ne!(
            random_partition(100, 7, 3).unwrap(),
            random_partition(100, 7, 4).unwrap()
        );
        assert!(matches!(random_partition(3, 4, 0), Err(Error::Domain(_))));
        assert!(matches!(random_partition(3, 0, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn random_partition_is_balanced() {
        for (n, m) in [(10, 3), (4096, 32), (1000, 128), (7, 7)] {
            let a = random_partition(n, m, 9).unwrap();
            let max = *a.sizes().iter().max().unwrap();
            assert!(max - a.n_min() <= 1);
            assert_eq!(a.sizes().iter().sum::<usize>(), n);
        }
    }

    #[test]
    fn kmeans_single_group_is_the_mean() {
        let g = SignatureSet::new(gaussian(5, 30, 2)).unwrap();
        let km = kmeans(&g, 1, 0, 10, Exec::Parallel).unwrap();
        assert!(km.assignment.labels().iter().all(|&l| l == 0));
        assert!((km.centroids.column(0) - g.mean()).amax() < 1e-12);
    }

    #[test]
    fn kmeans_recovers_separated_blobs() {
        let (d, per) = (6, 40);
        let mut x = gaussian(d, 2 * per, 5);
        for j in per..2 * per {
            x[(0, j)] += 20.0;
        }
        let g = SignatureSet::new(x.clone()).unwrap();
        let km = kmeans(&g, 2, 13, 100, Exec::Parallel).unwrap();
        let labels = km.assignment.labels();
        assert!(labels[..per].iter().all(|&l| l == labels[0]));
        assert!(labels[per..].iter().all(|&l| l == labels[per]));
        assert_ne!(labels[0], labels[per]);
        assert!(km.converged);
        // brute-force nearest-centroid check
        for (j, &label) in labels.iter().enumerate().take(2 * per) {
            let dists: Vec<f64> = (0..2)
                .map(|k| (x.column(j) - km.centroids.column(k)).norm_squared())
                .collect();
            let nearest = if dists[0] <= dists[1] { 0 } else { 1 };
            assert_eq!(label, nearest);
        }
    }

    #[test]
    fn kmeans_repairs_empty_groups() {
        let x = DMatrix::from_fn(3, 4, |i, _| i as f64);
        let g = SignatureSet::new(x).unwrap();
        let km = kmeans(&g, 2, 0, 100, Exec::Sequential).unwrap();
        assert_eq!(km.assignment.groups(), 2);
        assert!(km.assignment.n_min() >= 1);
        assert_eq!(km.assignment.sizes().iter().sum::<usize>(), 4);
    }

    #[test]
    fn kmeans_objective_never_increases() {
        let g = SignatureSet::new(gaussian(16, 400, 8)).unwrap();
        for seed in 0..4 {
            let km = kmeans(&g, 12, seed, 100, Exec::Parallel).unwrap();
            for w in km.objective_trace.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "{:?}", km.objective_trace);
            }
            assert!(km.assignment.n_min() >= 1);
        }
    }

    #[test]
    fn kmeans_is_deterministic_across_strategies() {
        let g = SignatureSet::new(gaussian(10, 300, 1)).unwrap();
        let a = kmeans(&g, 7, 42, 50, Exec::Parallel).unwrap();
        let b = kmeans(&g, 7, 42, 50, Exec::Sequential).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            kmeans(&g, 301, 0, 5, Exec::Parallel),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn assignment_csv() {
        let a = GroupAssignment::from_labels(vec![1, 0, 1], 2).unwrap();
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "index,group_id\n0,1\n1,0\n2,1\n"
        );
        assert_eq!(a.members(), vec![vec![1], vec![0, 2]]);
        assert!(GroupAssignment::from_labels(vec![2], 2).is_err());
    }
}
