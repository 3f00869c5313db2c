use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dictionary::seed_columns;
use super::{Codebook, FeatureStack};
use crate::error::{Error, Result};

const MAX_LLOYD_ITERATIONS: usize = 100;

/// Lloyd's k-means on the feature columns, centers renormalized to unit norm.
/// Initial centers are distinct columns drawn at random from `seed`.
pub fn kmeans_codebook(x: &FeatureStack, k: usize, seed: u64) -> Result<Codebook> {
    let n = x.len();
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!("need 1 <= k <= {n}, got k = {k}")));
    }
    let dim = x.channels();
    let columns = x.pixel_major();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut centers, _) = seed_columns(&columns, dim, k, &mut rng);
    let mut assignment = vec![usize::MAX; n];

    for _ in 0..MAX_LLOYD_ITERATIONS {
        let mut changed = false;
        for (i, col) in columns.chunks(dim).enumerate() {
            let best = nearest(col, &centers).0;
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (col, &a) in columns.chunks(dim).zip(&assignment) {
            counts[a] += 1;
            for d in 0..dim {
                sums[a][d] += col[d];
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                // Empty cluster: move the center onto the point farthest from its own center.
                let far = farthest_point(&columns, dim, &centers, &assignment);
                centers[j] = columns[far * dim..(far + 1) * dim].to_vec();
                assignment[far] = j;
                changed = true;
            } else {
                centers[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }

    let units: Vec<Vec<f64>> = centers
        .into_iter()
        .enumerate()
        .map(|(j, c)| {
            if c.iter().any(|v| *v != 0.0) {
                c
            } else {
                let mut e = vec![0.0; dim];
                e[j % dim] = 1.0;
                e
            }
        })
        .collect();
    Codebook::from_columns(&units)
}

fn nearest(col: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d: f64 = col.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum();
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn farthest_point(columns: &[f64], dim: usize, centers: &[Vec<f64>], assignment: &[usize]) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, col) in columns.chunks(dim).enumerate() {
        let c = &centers[assignment[i]];
        let d: f64 = col.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum();
        if d > best.1 {
            best = (i, d);
        }
    }
    best.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::Grid2D;
    use rand::Rng;

    fn stack(cols: &[Vec<f64>]) -> FeatureStack {
        let dim = cols[0].len();
        let flat: Vec<f64> = cols.iter().flatten().copied().collect();
        FeatureStack::from_pixel_major(Grid2D::new(1, cols.len()).unwrap(), dim, &flat).unwrap()
    }

    #[test]
    fn distinct_columns_are_the_centers() {
        let distinct = [vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]];
        let cols: Vec<Vec<f64>> = (0..12).map(|i| distinct[i % 3].clone()).collect();
        let book = kmeans_codebook(&stack(&cols), 3, 4).unwrap();
        let mut atoms: Vec<Vec<f64>> = (0..3).map(|j| book.atom(j)).collect();
        atoms.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut expected = distinct.to_vec();
        expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(atoms, expected);
    }

    #[test]
    fn one_center_per_blob() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut cols = Vec::new();
        for i in 0..40 {
            let (cx, cy) = if i % 2 == 0 { (10.0, 0.0) } else { (0.0, 10.0) };
            cols.push(vec![cx + rng.random_range(-0.5..0.5), cy + rng.random_range(-0.5..0.5)]);
        }
        for seed in 0..5 {
            let book = kmeans_codebook(&stack(&cols), 2, seed).unwrap();
            let mut hits = [false, false];
            for j in 0..2 {
                let a = book.atom(j);
                if a[0] > 0.9 {
                    hits[0] = true;
                }
                if a[1] > 0.9 {
                    hits[1] = true;
                }
            }
            assert_eq!(hits, [true, true], "seed {seed}");
        }
    }

    #[test]
    fn seeds_can_disagree() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cols: Vec<Vec<f64>> =
            (0..60).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let x = stack(&cols);
        let books: Vec<Codebook> = (0..8).map(|s| kmeans_codebook(&x, 5, s).unwrap()).collect();
        assert!(books.iter().any(|b| b != &books[0]));
        for b in &books {
            b.validate().unwrap();
        }
    }
}
