//! Space-filling and random designs on the normalized box `[-1, 1]^n_s`.

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io;
use crate::pce::ParamBounds;

/// Identifier recorded in manifests for the generator behind every design.
pub const RNG_NAME: &str = "chacha8";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DesignKind {
    Lhs,
    Random,
    Subset,
}

/// Design points (one per row) in normalized coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub points: DMatrix<f64>,
    pub kind: DesignKind,
    pub seed: u64,
}

impl Design {
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.points.row(i).iter().copied().collect()
    }
}

/// Seeds a generator for a named stream under a master seed.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes a master seed with an index into an independent child seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Latin hypercube: each coordinate takes one uniformly placed value in each
/// of `n` equal-width strata of `[-1, 1]`.
pub fn latin_hypercube(n: usize, n_s: usize, seed: u64) -> Design {
    let mut rng = rng_for(seed, 0);
    let mut points = DMatrix::zeros(n, n_s);
    let width = 2.0 / n as f64;
    for d in 0..n_s {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        for (i, &s) in perm.iter().enumerate() {
            let u: f64 = rng.gen();
            points[(i, d)] = (-1.0 + (s as f64 + u) * width).clamp(-1.0, 1.0);
        }
    }
    Design {
        points,
        kind: DesignKind::Lhs,
        seed,
    }
}

/// I.i.d. uniform points on `[-1, 1]^n_s`.
pub fn random_design(n: usize, n_s: usize, seed: u64) -> Design {
    let mut rng = rng_for(seed, 1);
    let points = DMatrix::from_fn(n, n_s, |_, _| rng.gen_range(-1.0..1.0));
    Design {
        points,
        kind: DesignKind::Random,
        seed,
    }
}

/// Greedy maximin selection of `m` rows: seed with the row nearest the
/// centroid, then repeatedly add the row farthest from the chosen set.
/// Ties go to the lowest index.
pub fn maximin_subset(parent: &DMatrix<f64>, m: usize) -> Result<Vec<usize>> {
    let n = parent.nrows();
    if m > n {
        return Err(Error::InvalidArgument(format!("cannot pick {m} points from {n}")));
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    let centroid = parent.row_mean();
    let dist2 = |i: usize, c: &[f64]| -> f64 { (0..parent.ncols()).map(|d| (parent[(i, d)] - c[d]).powi(2)).sum() };
    let c: Vec<f64> = centroid.iter().copied().collect();
    let first = (0..n).fold(0, |b, i| if dist2(i, &c) < dist2(b, &c) { i } else { b });
    let mut chosen = vec![first];
    let mut min_d: Vec<f64> = {
        let p: Vec<f64> = parent.row(first).iter().copied().collect();
        (0..n).map(|i| dist2(i, &p)).collect()
    };
    min_d[first] = f64::NEG_INFINITY;
    while chosen.len() < m {
        let next = (0..n).fold(None, |b: Option<usize>, i| match b {
            Some(b) if min_d[b] >= min_d[i] => Some(b),
            _ if min_d[i] == f64::NEG_INFINITY => b,
            _ => Some(i),
        });
        let next = next.expect("fewer points chosen than available");
        chosen.push(next);
        let p: Vec<f64> = parent.row(next).iter().copied().collect();
        for i in 0..n {
            if min_d[i] != f64::NEG_INFINITY {
                min_d[i] = min_d[i].min(dist2(i, &p));
            }
        }
        min_d[next] = f64::NEG_INFINITY;
    }
    Ok(chosen)
}

/// Smallest pairwise Euclidean distance between rows.
pub fn min_pairwise_distance(points: &DMatrix<f64>) -> f64 {
    let n = points.nrows();
    let mut best = f64::INFINITY;
    for i in 0..n {
        for j in 0..i {
            let d = (points.row(i) - points.row(j)).norm();
            best = best.min(d);
        }
    }
    best
}

/// Writes a design CSV: a `#bounds` comment row, then `xi_1..xi_n` columns.
pub fn write_design_csv(path: &Path, points: &DMatrix<f64>, bounds: &ParamBounds) -> Result<()> {
    let header: Vec<String> = (1..=points.ncols()).map(|d| format!("xi_{d}")).collect();
    let body = io::matrix_csv_string(&header, points);
    io::write_text(path, &format!("#bounds {}\n{body}", bounds.tokens().join(" ")))
}

/// Reads a design CSV written by [`write_design_csv`].
pub fn read_design_csv(path: &Path) -> Result<(DMatrix<f64>, ParamBounds)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let first = text.lines().next().unwrap_or("");
    let tokens: Vec<&str> = first
        .strip_prefix("#bounds")
        .ok_or_else(|| Error::data(path, 1, "missing `#bounds` row"))?
        .split_whitespace()
        .collect();
    let bounds = ParamBounds::from_tokens(&tokens).map_err(|e| Error::data(path, 1, e.to_string()))?;
    let (_, points) = io::read_matrix_csv(path)?;
    if points.ncols() != bounds.dim() {
        return Err(Error::data(path, 2, "column count does not match bounds"));
    }
    Ok((points, bounds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn strata_counts(d: &Design, col: usize) -> Vec<usize> {
        let n = d.len();
        let mut counts = vec![0; n];
        for i in 0..n {
            let s = (((d.points[(i, col)] + 1.0) / 2.0 * n as f64).floor() as usize).min(n - 1);
            counts[s] += 1;
        }
        counts
    }

    #[test]
    fn lhs_single_point() {
        let d = latin_hypercube(1, 3, 4);
        assert_eq!(d.len(), 1);
        assert!(d.points.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn lhs_stratification() {
        for (n, seed) in [(5, 1), (200, 0)] {
            let d = latin_hypercube(n, 2, seed);
            for col in 0..2 {
                assert!(strata_counts(&d, col).iter().all(|&c| c == 1));
            }
        }
    }

    #[test]
    fn designs_are_reproducible() {
        assert_eq!(latin_hypercube(20, 3, 9), latin_hypercube(20, 3, 9));
        assert_eq!(random_design(20, 3, 9), random_design(20, 3, 9));
        assert_ne!(random_design(20, 3, 9).points, random_design(20, 3, 10).points);
    }

    #[test]
    fn random_design_marginal_means() {
        let n = 10_000;
        let d = random_design(n, 2, 3);
        let bound = 3.0 / (3.0 * n as f64).sqrt() * 2.0;
        for col in 0..2 {
            assert!(d.points.column(col).mean().abs() < bound);
        }
        assert!(d.points.iter().all(|v| *v > -1.0 && *v < 1.0));
    }

    #[test]
    fn maximin_edge_cases() {
        let parent = latin_hypercube(30, 2, 2).points;
        let mut all = maximin_subset(&parent, 30).unwrap();
        all.sort();
        assert_eq!(all, (0..30).collect::<Vec<_>>());
        let one = maximin_subset(&parent, 1).unwrap();
        let c = parent.row_mean();
        let nearest = (0..30)
            .min_by(|&a, &b| {
                (parent.row(a) - &c)
                    .norm()
                    .partial_cmp(&(parent.row(b) - &c).norm())
                    .unwrap()
            })
            .unwrap();
        assert_eq!(one, vec![nearest]);
        assert!(maximin_subset(&parent, 31).is_err());
    }

    #[test]
    fn maximin_beats_random_subsets() {
        let parent = latin_hypercube(200, 2, 0).points;
        let pick = maximin_subset(&parent, 5).unwrap();
        let ours = min_pairwise_distance(&parent.select_rows(&pick));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut dists: Vec<f64> = (0..1000)
            .map(|_| {
                let idx: Vec<usize> = rand::seq::index::sample(&mut rng, 200, 5).into_vec();
                min_pairwise_distance(&parent.select_rows(&idx))
            })
            .collect();
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(ours >= dists[500]);
    }

    #[test]
    fn design_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("design.csv");
        let d = latin_hypercube(7, 2, 5);
        let b = ParamBounds::new(vec![40.0, 30.0], vec![60.0, 50.0]).unwrap();
        write_design_csv(&path, &d.points, &b).unwrap();
        let (p, b2) = read_design_csv(&path).unwrap();
        assert_eq!(p, d.points);
        assert_eq!(b2, b);
    }

    proptest! {
        #[test]
        fn lhs_always_stratified(n in 1usize..40, n_s in 1usize..4, seed in 0u64..1000) {
            let d = latin_hypercube(n, n_s, seed);
            for col in 0..n_s {
                prop_assert!(strata_counts(&d, col).iter().all(|&c| c == 1));
            }
        }

        #[test]
        fn derived_seeds_differ(master in 0u64..u64::MAX, i in 0u64..1000) {
            prop_assert_ne!(derive_seed(master, i), derive_seed(master, i + 1));
        }
    }
}
