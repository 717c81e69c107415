//! Synthetic dataset generators used by the CLI and the experiment suites.

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{GwError, Result};
use crate::geometry::Dataset;

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Balanced Gaussian mixture: k class means at pairwise distance >=
/// `separation`, unit-variance clouds, labels 0..k round-robin.
///
/// Means are placed at +/- scaled basis vectors, which supports up to 2d
/// classes in d dimensions.
pub fn gen_gaussian_mixture(
    n: usize,
    d: usize,
    k_classes: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if n < 1 || d < 1 || k_classes < 1 {
        return Err(GwError::invalid("gen_gaussian_mixture: n, d, k must be >= 1"));
    }
    if k_classes > n {
        return Err(GwError::invalid(format!(
            "gen_gaussian_mixture: k_classes={k_classes} exceeds n={n}"
        )));
    }
    if !(separation >= 0.0) {
        return Err(GwError::invalid("separation must be nonnegative"));
    }
    if k_classes > 2 * d {
        return Err(GwError::invalid(format!(
            "cannot place {k_classes} means at pairwise distance {separation} in \
             dimension {d} with the +/- basis layout (needs k <= 2d)"
        )));
    }
    // +a_c e_i and -a_c e_i: the closest pair is a*sqrt(2) apart at the base
    // radius. Radii grow with the class index so the inter-class distances
    // are generic; equal radii would put the means on a regular simplex whose
    // symmetries alias the classes under any distance-preserving criterion.
    let base = separation / std::f64::consts::SQRT_2;
    let mut means = Array2::zeros((k_classes, d));
    for c in 0..k_classes {
        let axis = c % d;
        let sign = if c < d { 1.0 } else { -1.0 };
        let stretch = if k_classes > 1 {
            1.0 + 0.3 * c as f64 / (k_classes - 1) as f64
        } else {
            1.0
        };
        means[[c, axis]] = sign * base * stretch;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Array2::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % k_classes;
        labels.push(c as i64);
        for j in 0..d {
            points[[i, j]] = means[[c, j]] + standard_normal(&mut rng);
        }
    }
    Dataset::new(points, Some(labels))
}

/// Apply a Haar-style random orthogonal transform to a dataset's points;
/// labels and measure are carried over. Pairwise Euclidean distances are
/// preserved.
pub fn gen_orthogonal_pair(x: &Dataset, seed: u64) -> Result<Dataset> {
    let d = x.dim();
    let q = random_orthogonal(d, seed);
    let points = x.points.dot(&q);
    Dataset::with_measure(points, x.labels.clone(), x.measure.clone())
}

/// Random orthogonal d x d matrix from Gram-Schmidt on a Gaussian matrix,
/// with the diagonal sign fixed for a Haar-like distribution.
pub fn random_orthogonal(d: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let a = Array2::from_shape_fn((d, d), |_| standard_normal(&mut rng));
        if let Some(q) = gram_schmidt(&a) {
            return q;
        }
        // Astronomically unlikely rank deficiency; redraw.
    }
}

fn gram_schmidt(a: &Array2<f64>) -> Option<Array2<f64>> {
    let d = a.nrows();
    let mut q = Array2::<f64>::zeros((d, d));
    for j in 0..d {
        let mut v: Array1<f64> = a.column(j).to_owned();
        for k in 0..j {
            let qk = q.column(k);
            let proj = qk.dot(&a.column(j));
            v = &v - &(&qk.to_owned() * proj);
        }
        let norm = v.dot(&v).sqrt();
        if norm < 1e-12 {
            return None;
        }
        // Sign convention: make the first nonzero-ish entry positive-free;
        // scaling by the sign of the pivot keeps the distribution symmetric.
        let sign = if a.column(j).dot(&v) >= 0.0 { 1.0 } else { -1.0 };
        for i in 0..d {
            q[[i, j]] = sign * v[i] / norm;
        }
    }
    Some(q)
}

/// Classic 3-D swiss roll with Gaussian noise; labels are the roll parameter
/// quantized into 8 bins.
pub fn gen_swiss_roll(n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n < 4 {
        return Err(GwError::invalid("gen_swiss_roll needs n >= 4"));
    }
    if !(noise >= 0.0) {
        return Err(GwError::invalid("noise must be nonnegative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Array2::zeros((n, 3));
    let mut labels = Vec::with_capacity(n);
    let t_min = 1.5 * std::f64::consts::PI;
    let t_max = 4.5 * std::f64::consts::PI;
    for i in 0..n {
        let u: f64 = rng.random_range(0.0..1.0);
        let t = t_min + u * (t_max - t_min);
        let height: f64 = rng.random_range(0.0..21.0);
        points[[i, 0]] = t * t.cos() + noise * standard_normal(&mut rng);
        points[[i, 1]] = height + noise * standard_normal(&mut rng);
        points[[i, 2]] = t * t.sin() + noise * standard_normal(&mut rng);
        let bin = ((u * 8.0).floor() as i64).min(7);
        labels.push(bin);
    }
    Dataset::new(points, Some(labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{pairwise_distances, MetricKind};

    #[test]
    fn mixture_is_deterministic_per_seed() {
        let a = gen_gaussian_mixture(50, 4, 3, 8.0, 7).unwrap();
        let b = gen_gaussian_mixture(50, 4, 3, 8.0, 7).unwrap();
        assert_eq!(a.points, b.points);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn mixture_within_class_closer_than_between_at_huge_separation() {
        let data = gen_gaussian_mixture(4, 3, 2, 100.0, 1).unwrap();
        let d = pairwise_distances(&data, MetricKind::Euclidean).unwrap();
        let labels = data.labels.as_ref().unwrap();
        let mut max_within: f64 = 0.0;
        let mut min_between = f64::INFINITY;
        for i in 0..4 {
            for j in 0..4 {
                if i == j {
                    continue;
                }
                if labels[i] == labels[j] {
                    max_within = max_within.max(d.values[[i, j]]);
                } else {
                    min_between = min_between.min(d.values[[i, j]]);
                }
            }
        }
        assert!(max_within * 5.0 < min_between);
    }

    #[test]
    fn mixture_nearest_centroid_perfect_at_large_separation() {
        let data = gen_gaussian_mixture(1000, 16, 10, 10.0, 3).unwrap();
        let labels = data.labels.as_ref().unwrap();
        let d = data.dim();
        let k = 10;
        let mut centroids = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0.0; k];
        for i in 0..1000 {
            let c = labels[i] as usize;
            counts[c] += 1.0;
            for j in 0..d {
                centroids[[c, j]] += data.points[[i, j]];
            }
        }
        for c in 0..k {
            for j in 0..d {
                centroids[[c, j]] /= counts[c];
            }
        }
        let mut correct = 0;
        for i in 0..1000 {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let mut s = 0.0;
                for j in 0..d {
                    let diff = data.points[[i, j]] - centroids[[c, j]];
                    s += diff * diff;
                }
                if s < best_d {
                    best_d = s;
                    best = c;
                }
            }
            if best == labels[i] as usize {
                correct += 1;
            }
        }
        assert_eq!(correct, 1000);
    }

    #[test]
    fn mixture_rejects_infeasible_layout() {
        assert!(gen_gaussian_mixture(10, 2, 5, 1.0, 0).is_err());
        assert!(gen_gaussian_mixture(3, 4, 5, 1.0, 0).is_err());
    }

    #[test]
    fn orthogonal_matrix_is_orthogonal() {
        for d in [1usize, 2, 5, 16] {
            let q = random_orthogonal(d, 11);
            let qtq = q.t().dot(&q);
            for i in 0..d {
                for j in 0..d {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!(
                        (qtq[[i, j]] - want).abs() <= 1e-12,
                        "d={d} ({i},{j}) {}",
                        qtq[[i, j]]
                    );
                }
            }
        }
    }

    #[test]
    fn orthogonal_pair_preserves_distances() {
        let x = gen_gaussian_mixture(40, 6, 4, 5.0, 2).unwrap();
        let y = gen_orthogonal_pair(&x, 9).unwrap();
        assert_eq!(x.labels, y.labels);
        let dx = pairwise_distances(&x, MetricKind::Euclidean).unwrap();
        let dy = pairwise_distances(&y, MetricKind::Euclidean).unwrap();
        for (a, b) in dx.values.iter().zip(dy.values.iter()) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn orthogonal_pair_in_one_dimension_is_reflection() {
        let x = Dataset::new(Array2::from_shape_fn((5, 1), |(i, _)| i as f64), None).unwrap();
        let y = gen_orthogonal_pair(&x, 4).unwrap();
        let q = y.points[[1, 0]] / x.points[[1, 0]];
        assert!((q.abs() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn swiss_roll_noise_zero_lies_on_surface() {
        let data = gen_swiss_roll(100, 0.0, 5).unwrap();
        for i in 0..100 {
            let x = data.points[[i, 0]];
            let z = data.points[[i, 2]];
            let t = (x * x + z * z).sqrt();
            assert!((x - t * t.cos()).abs() <= 1e-9);
            assert!((z - t * t.sin()).abs() <= 1e-9);
        }
    }

    #[test]
    fn swiss_roll_deterministic() {
        let a = gen_swiss_roll(64, 0.3, 8).unwrap();
        let b = gen_swiss_roll(64, 0.3, 8).unwrap();
        assert_eq!(a.points, b.points);
    }
}
