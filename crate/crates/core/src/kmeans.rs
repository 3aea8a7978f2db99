//! Shared codebooks and hard assignments, learned with k-means++ seeding and
//! Lloyd refinement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::weightio::SubVectorTable;

/// Squared Euclidean distance, accumulated in `f32`.
#[inline]
pub fn sq_dist(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `k x d` table of codewords. `k` is always a power of two so that an index
/// occupies exactly `log2 k` bits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    k: usize,
    d: usize,
    entries: Vec<f32>,
}

impl Codebook {
    pub fn new(k: usize, d: usize, entries: Vec<f32>) -> Result<Self> {
        if !k.is_power_of_two() {
            return Err(contract(format!("codebook size {k} is not a power of two")));
        }
        if d == 0 {
            return Err(contract("codeword length must be positive"));
        }
        if entries.len() != k * d {
            return Err(contract(format!(
                "codebook {k}x{d} needs {} entries, got {}",
                k * d,
                entries.len()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("codebook contains a non-finite entry".into()));
        }
        Ok(Self { k, d, entries })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// `log2 k`, the width of one packed index.
    pub fn index_bits(&self) -> u32 {
        self.k.trailing_zeros()
    }

    pub fn entries(&self) -> &[f32] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [f32] {
        &mut self.entries
    }

    pub fn codeword(&self, idx: usize) -> &[f32] {
        &self.entries[idx * self.d..(idx + 1) * self.d]
    }

    /// Index of the nearest codeword and its squared distance; ties go to
    /// the lowest index.
    pub fn nearest(&self, w: &[f32]) -> (u32, f32) {
        let mut best = 0usize;
        let mut best_dist = f32::INFINITY;
        for (idx, c) in self.entries.chunks_exact(self.d).enumerate() {
            let dist = sq_dist(w, c);
            if dist < best_dist {
                best_dist = dist;
                best = idx;
            }
        }
        (best as u32, best_dist)
    }

    /// Largest Euclidean distance between any two codewords.
    pub fn max_pairwise_distance(&self) -> f64 {
        let mut max = 0f32;
        for a in 0..self.k {
            for b in a + 1..self.k {
                max = max.max(sq_dist(self.codeword(a), self.codeword(b)));
            }
        }
        f64::from(max).sqrt()
    }
}

/// Hard assignment grid: one codeword index per sub-vector, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignments {
    rows: usize,
    slots: usize,
    indices: Vec<u32>,
}

impl Assignments {
    pub fn new(rows: usize, slots: usize, indices: Vec<u32>) -> Result<Self> {
        if indices.len() != rows * slots {
            return Err(contract(format!(
                "assignment grid {rows}x{slots} needs {} indices, got {}",
                rows * slots,
                indices.len()
            )));
        }
        Ok(Self { rows, slots, indices })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn get(&self, row: usize, slot: usize) -> u32 {
        self.indices[row * self.slots + slot]
    }

    pub fn check_range(&self, k: usize) -> Result<()> {
        match self.indices.iter().position(|&a| a as usize >= k) {
            Some(pos) => Err(contract(format!(
                "assignment {} at position {pos} is out of range for k = {k}",
                self.indices[pos]
            ))),
            None => Ok(()),
        }
    }

    /// Row-major `rows x (slots * d)` weights with each slot replaced by its
    /// codeword.
    pub fn reconstruct(&self, cb: &Codebook) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.indices.len() * cb.dim());
        for &a in &self.indices {
            out.extend_from_slice(cb.codeword(a as usize));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub max_iters: usize,
    /// Stop once the relative distortion improvement falls below this.
    pub tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self { max_iters: 100, tol: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct LloydOutcome {
    pub codebook: Codebook,
    pub assignments: Assignments,
    pub distortion: f64,
    /// Distortion after every accepted assignment step, starting with the
    /// initial codebook.
    pub history: Vec<f64>,
}

/// k-means++ seeding.
///
/// RNG protocol (a ChaCha8 stream seeded with `seed`): the first center is
/// `random_range(0..n)`; every further center draws one `f64` in `[0, 1)`,
/// scales it by the total squared distance, and takes the first sub-vector
/// whose running sum exceeds it. If every remaining sub-vector duplicates a
/// chosen center, an unchosen one is drawn uniformly instead.
pub fn kmeanspp_seed(table: &SubVectorTable<'_>, k: usize, seed: u64) -> Result<Codebook> {
    let n = table.len();
    if n < k {
        return Err(Error::Seeding(format!("{n} sub-vectors cannot seed {k} codewords")));
    }
    if !k.is_power_of_two() {
        return Err(contract(format!("codebook size {k} is not a power of two")));
    }
    let d = table.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![false; n];
    let mut entries = Vec::with_capacity(k * d);

    let first = rng.random_range(0..n);
    chosen[first] = true;
    entries.extend_from_slice(table.flat(first));
    let c0 = table.flat(first);
    let mut mind: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|j| f64::from(sq_dist(table.flat(j), c0)))
        .collect();

    for _ in 1..k {
        let total: f64 = mind.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (j, &m) in mind.iter().enumerate() {
                acc += m;
                if acc > u {
                    pick = Some(j);
                    break;
                }
            }
            // rounding can leave u just above the final running sum
            pick.unwrap_or_else(|| mind.iter().rposition(|&m| m > 0.0).unwrap())
        } else {
            let free: Vec<usize> = (0..n).filter(|&j| !chosen[j]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        let c = table.flat(pick);
        entries.extend_from_slice(c);
        mind.par_iter_mut().enumerate().for_each(|(j, m)| {
            let dist = f64::from(sq_dist(table.flat(j), c));
            if dist < *m {
                *m = dist;
            }
        });
    }
    Codebook::new(k, d, entries)
}

fn check_dims(table: &SubVectorTable<'_>, cb: &Codebook) -> Result<()> {
    if table.dim() != cb.dim() {
        return Err(contract(format!(
            "sub-vector length {} does not match codeword length {}",
            table.dim(),
            cb.dim()
        )));
    }
    Ok(())
}

fn assign_with_distances(table: &SubVectorTable<'_>, cb: &Codebook) -> (Vec<u32>, Vec<f32>) {
    (0..table.len())
        .into_par_iter()
        .map(|j| cb.nearest(table.flat(j)))
        .unzip()
}

/// Nearest-codeword assignment (ties to the lowest index).
pub fn nearest_assign(table: &SubVectorTable<'_>, cb: &Codebook) -> Result<Assignments> {
    check_dims(table, cb)?;
    let (indices, _) = assign_with_distances(table, cb);
    Assignments::new(table.rows(), table.slots(), indices)
}

/// Total squared reconstruction error `sum ||w - c(a)||^2`.
pub fn distortion(table: &SubVectorTable<'_>, cb: &Codebook, assignments: &Assignments) -> f64 {
    table
        .iter()
        .zip(assignments.indices())
        .map(|(w, &a)| f64::from(sq_dist(w, cb.codeword(a as usize))))
        .sum()
}

fn update_centers(table: &SubVectorTable<'_>, cb: &Codebook, assign: &[u32], dists: &[f32]) -> Codebook {
    let (k, d) = (cb.k(), cb.dim());
    let mut sums = vec![0f64; k * d];
    let mut counts = vec![0usize; k];
    for (w, &a) in table.iter().zip(assign) {
        let a = a as usize;
        counts[a] += 1;
        for (s, &x) in sums[a * d..(a + 1) * d].iter_mut().zip(w) {
            *s += f64::from(x);
        }
    }
    let mut entries = cb.entries().to_vec();
    for c in 0..k {
        if counts[c] > 0 {
            let n = counts[c] as f64;
            for (e, s) in entries[c * d..(c + 1) * d].iter_mut().zip(&sums[c * d..(c + 1) * d]) {
                *e = (s / n) as f32;
            }
        }
    }
    // Empty clusters move onto the sub-vectors worst served by their centers.
    let mut residual = dists.to_vec();
    for c in (0..k).filter(|&c| counts[c] == 0) {
        let mut far = 0usize;
        for (j, &r) in residual.iter().enumerate() {
            if r > residual[far] {
                far = j;
            }
        }
        if residual[far] <= 0.0 {
            break;
        }
        entries[c * d..(c + 1) * d].copy_from_slice(table.flat(far));
        residual[far] = 0.0;
    }
    Codebook::new(k, d, entries).expect("means of finite values are finite")
}

/// Lloyd refinement starting from `cb`.
///
/// The returned distortion history is non-increasing: an update that would
/// raise the distortion (possible only through rounding) ends the run with
/// the previous codebook.
pub fn lloyd(table: &SubVectorTable<'_>, cb: &Codebook, cfg: &KMeansConfig) -> Result<LloydOutcome> {
    check_dims(table, cb)?;
    let mut centers = cb.clone();
    let (mut assign, mut dists) = assign_with_distances(table, &centers);
    let mut current: f64 = dists.iter().map(|&x| f64::from(x)).sum();
    let mut history = vec![current];

    for _ in 0..cfg.max_iters {
        if current == 0.0 {
            break;
        }
        let next_centers = update_centers(table, &centers, &assign, &dists);
        let (next_assign, next_dists) = assign_with_distances(table, &next_centers);
        let next: f64 = next_dists.iter().map(|&x| f64::from(x)).sum();
        if next > current {
            break;
        }
        let improvement = (current - next) / current;
        centers = next_centers;
        assign = next_assign;
        dists = next_dists;
        current = next;
        history.push(current);
        if improvement < cfg.tol {
            break;
        }
    }
    Ok(LloydOutcome {
        assignments: Assignments::new(table.rows(), table.slots(), assign)?,
        codebook: centers,
        distortion: current,
        history,
    })
}

/// Seeding followed by Lloyd refinement.
pub fn kmeans(table: &SubVectorTable<'_>, k: usize, seed: u64, cfg: &KMeansConfig) -> Result<LloydOutcome> {
    let init = kmeanspp_seed(table, k, seed)?;
    lloyd(table, &init, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weightio::{partition, WeightMatrix};

    fn column(values: &[f32]) -> WeightMatrix {
        WeightMatrix::new("w", values.len(), 1, values.to_vec()).unwrap()
    }

    #[test]
    fn seeding_exhausts_distinct_points() {
        let w = WeightMatrix::new("w", 4, 2, vec![0., 0., 1., 0., 0., 1., 5., 5.]).unwrap();
        let t = partition(&w, 2).unwrap();
        let cb = kmeanspp_seed(&t, 4, 3).unwrap();
        let mut got: Vec<_> = cb.entries().chunks(2).map(|c| (c[0] as i32, c[1] as i32)).collect();
        got.sort();
        assert_eq!(got, vec![(0, 0), (0, 1), (1, 0), (5, 5)]);
    }

    #[test]
    fn seeding_needs_enough_points() {
        let w = column(&[1., 2.]);
        let t = partition(&w, 1).unwrap();
        assert!(matches!(kmeanspp_seed(&t, 4, 0), Err(Error::Seeding(_))));
    }

    #[test]
    fn seeding_tolerates_duplicates() {
        let w = column(&[1., 1., 1., 1., 2., 2.]);
        let t = partition(&w, 1).unwrap();
        let cb = kmeanspp_seed(&t, 4, 11).unwrap();
        assert_eq!(cb.k(), 4);
    }

    #[test]
    fn lloyd_two_clusters_on_a_line() {
        let w = column(&[0., 1., 10., 11.]);
        let t = partition(&w, 1).unwrap();
        let init = Codebook::new(2, 1, vec![0., 1.]).unwrap();
        let out = lloyd(&t, &init, &KMeansConfig::default()).unwrap();
        let mut centers = out.codebook.entries().to_vec();
        centers.sort_by(f32::total_cmp);
        assert_eq!(centers, vec![0.5, 10.5]);
        assert_eq!(out.distortion, 1.0);
    }

    #[test]
    fn lloyd_perfect_clustering() {
        let distinct = [-3.0f32, -1.0, 2.0, 7.5];
        let values: Vec<f32> = (0..40).map(|i| distinct[i % 4]).collect();
        let w = column(&values);
        let t = partition(&w, 1).unwrap();
        let out = kmeans(&t, 4, 5, &KMeansConfig::default()).unwrap();
        assert_eq!(out.distortion, 0.0);
        let mut centers = out.codebook.entries().to_vec();
        centers.sort_by(f32::total_cmp);
        assert_eq!(centers, distinct.to_vec());
    }

    #[test]
    fn empty_cluster_is_reseeded() {
        // codeword 1 starts far from everything and captures nothing
        let w = column(&[0., 0.1, 0.2, 5.0]);
        let t = partition(&w, 1).unwrap();
        let init = Codebook::new(2, 1, vec![0.1, 1000.]).unwrap();
        let out = lloyd(&t, &init, &KMeansConfig::default()).unwrap();
        let mut centers = out.codebook.entries().to_vec();
        centers.sort_by(f32::total_cmp);
        assert!((centers[0] - 0.1).abs() < 1e-6);
        assert_eq!(centers[1], 5.0);
    }

    #[test]
    fn nearest_ties_go_low() {
        let cb = Codebook::new(8, 1, vec![0., 1., 4., 9., 16., 25., 6., 30.]).unwrap();
        // 5 is equidistant to codewords 2 (value 4) and 6 (value 6)
        assert_eq!(cb.nearest(&[5.0]).0, 2);
        assert_eq!(cb.nearest(&[25.0]), (5, 0.0));
    }

    #[test]
    fn dimension_mismatch_is_contract_error() {
        let w = column(&[1., 2.]);
        let t = partition(&w, 1).unwrap();
        let cb = Codebook::new(2, 2, vec![0.; 4]).unwrap();
        assert!(matches!(nearest_assign(&t, &cb), Err(Error::Contract(_))));
    }

    #[test]
    fn codebook_requires_power_of_two() {
        assert!(Codebook::new(3, 1, vec![0.; 3]).is_err());
        assert!(Codebook::new(1, 2, vec![0.; 2]).is_ok());
    }
}
