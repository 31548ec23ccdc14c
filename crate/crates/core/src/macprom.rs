//! MAC-guided adaptive clustering of local bases and k-NN cluster lookup.

use nalgebra::{DMatrix, DVectorView};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::ParameterSample;

/// Modal assurance criterion `|aᵀb|² / (aᵀa · bᵀb)`.
pub fn mac(a: DVectorView<'_, f64>, b: DVectorView<'_, f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("MAC of vectors with {} and {} entries", a.len(), b.len())));
    }
    let (aa, bb) = (a.dot(&a), b.dot(&b));
    if aa == 0.0 || bb == 0.0 {
        return Err(Error::invalid("MAC is undefined for a zero vector"));
    }
    let ab = a.dot(&b);
    Ok((ab * ab / (aa * bb)).clamp(0.0, 1.0))
}

/// Mean MAC over corresponding columns.
pub fn basis_similarity(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("bases of shape {:?} and {:?}", a.shape(), b.shape())));
    }
    let mut total = 0.0;
    for j in 0..a.ncols() {
        total += mac(a.column(j), b.column(j))?;
    }
    Ok(total / a.ncols() as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterLibrary {
    /// Training-sample index of each cluster centre.
    pub centers: Vec<usize>,
    /// Cluster of each training sample.
    pub assignments: Vec<usize>,
    /// Similarity of each training sample to its centre.
    pub similarity: Vec<f64>,
    pub samples: Vec<ParameterSample>,
    pub mac_tolerance: f64,
    pub max_clusters: usize,
}

impl ClusterLibrary {
    pub fn n_clusters(&self) -> usize {
        self.centers.len()
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] == cluster).collect()
    }

    pub fn min_similarity(&self) -> f64 {
        self.similarity.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn nearest_to_origin(samples: &[ParameterSample]) -> usize {
    let zero = vec![0.0; samples[0].normalized.len()];
    (0..samples.len())
        .min_by(|&a, &b| samples[a].distance(&zero).total_cmp(&samples[b].distance(&zero)))
        .expect("non-empty")
}

fn assign(sim: &DMatrix<f64>, centers: &[usize]) -> (Vec<usize>, Vec<f64>) {
    (0..sim.nrows())
        .map(|i| {
            let mut best = (0, f64::NEG_INFINITY);
            for (c, &ci) in centers.iter().enumerate() {
                let s = if i == ci { 1.0 } else { sim[(i, ci)] };
                if s > best.1 {
                    best = (c, s);
                }
            }
            best
        })
        .unzip()
}

/// Greedy clustering: start from the sample nearest the domain centre and keep
/// promoting the worst-represented sample to a new centre until every sample
/// has similarity at least `1 − mac_tolerance` to its centre or the cap binds.
pub fn adaptive_cluster(
    training: &[(ParameterSample, DMatrix<f64>)],
    mac_tolerance: f64,
    max_clusters: usize,
) -> Result<ClusterLibrary> {
    adaptive_cluster_with(training.to_vec(), mac_tolerance, max_clusters, |_, _| Vec::new()).map(|(lib, _)| lib)
}

/// [`adaptive_cluster`] with a refinement hook. Whenever a new centre is
/// promoted, `refine(center, worst)` may return additional training pairs
/// (for instance fresh full-order runs between the two parameter points);
/// they are appended and the clustering continues. Returns the library and
/// the final training set.
pub fn adaptive_cluster_with<F>(
    mut training: Vec<(ParameterSample, DMatrix<f64>)>,
    mac_tolerance: f64,
    max_clusters: usize,
    mut refine: F,
) -> Result<(ClusterLibrary, Vec<(ParameterSample, DMatrix<f64>)>)>
where
    F: FnMut(&ParameterSample, &ParameterSample) -> Vec<(ParameterSample, DMatrix<f64>)>,
{
    if training.is_empty() {
        return Err(Error::invalid("clustering needs at least one training basis"));
    }
    if !(mac_tolerance > 0.0 && mac_tolerance < 1.0) {
        return Err(Error::config(format!("mac_tolerance {mac_tolerance} must lie in (0, 1)")));
    }
    if max_clusters == 0 {
        return Err(Error::config("max_clusters must be at least 1"));
    }
    let samples: Vec<ParameterSample> = training.iter().map(|t| t.0.clone()).collect();
    let mut centers = vec![nearest_to_origin(&samples)];
    let mut sim = similarity_matrix(&training)?;
    loop {
        let (assignments, similarity) = assign(&sim, &centers);
        let worst = (0..similarity.len())
            .min_by(|&a, &b| similarity[a].total_cmp(&similarity[b]))
            .expect("non-empty");
        if similarity[worst] >= 1.0 - mac_tolerance || centers.len() >= max_clusters {
            let library = ClusterLibrary {
                centers,
                assignments,
                similarity,
                samples: training.iter().map(|t| t.0.clone()).collect(),
                mac_tolerance,
                max_clusters,
            };
            return Ok((library, training));
        }
        let center = centers[assignments[worst]];
        let extra = refine(&training[center].0, &training[worst].0);
        centers.push(worst);
        if !extra.is_empty() {
            training.extend(extra);
            sim = similarity_matrix(&training)?;
        }
    }
}

fn similarity_matrix(training: &[(ParameterSample, DMatrix<f64>)]) -> Result<DMatrix<f64>> {
    let n = training.len();
    let mut sim = DMatrix::from_element(n, n, 1.0);
    for i in 0..n {
        for j in 0..i {
            let s = basis_similarity(&training[i].1, &training[j].1)?;
            sim[(i, j)] = s;
            sim[(j, i)] = s;
        }
    }
    Ok(sim)
}

/// Majority vote over the `k` nearest training samples (normalized Euclidean
/// distance); ties go to the tied cluster holding the closest neighbour.
pub fn select_cluster(library: &ClusterLibrary, query: &[f64], k: usize) -> Result<usize> {
    if library.samples.is_empty() {
        return Err(Error::invalid("empty cluster library"));
    }
    if k == 0 {
        return Err(Error::config("k must be at least 1"));
    }
    let mut order: Vec<(f64, usize)> =
        library.samples.iter().enumerate().map(|(i, s)| (s.distance(query), i)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    order.truncate(k.min(order.len()));
    let mut votes = vec![0usize; library.n_clusters()];
    let mut closest = vec![f64::INFINITY; library.n_clusters()];
    for &(d, i) in &order {
        let c = library.assignments[i];
        votes[c] += 1;
        closest[c] = closest[c].min(d);
    }
    let top = *votes.iter().max().expect("non-empty");
    Ok((0..votes.len())
        .filter(|&c| votes[c] == top)
        .min_by(|&a, &b| closest[a].total_cmp(&closest[b]).then(a.cmp(&b)))
        .expect("at least one cluster has the top vote"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(x: &[f64]) -> ParameterSample {
        ParameterSample { values: x.to_vec(), normalized: x.to_vec() }
    }

    fn unit(n: usize, i: usize) -> DVector<f64> {
        let mut v = DVector::zeros(n);
        v[i] = 1.0;
        v
    }

    #[test]
    fn mac_basics() {
        let w = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        assert!((mac(w.as_view(), w.as_view()).unwrap() - 1.0).abs() < 1e-15);
        let w2 = &w * 2.0;
        assert!((mac(w2.as_view(), w.as_view()).unwrap() - 1.0).abs() < 1e-15);
        let (e1, e2) = (unit(3, 0), unit(3, 1));
        assert_eq!(mac(e1.as_view(), e2.as_view()).unwrap(), 0.0);
        let z = DVector::zeros(3);
        assert!(mac(z.as_view(), w.as_view()).is_err());
    }

    #[test]
    fn similarity_basics() {
        let v = DMatrix::from_fn(5, 2, |i, j| ((i + 2 * j) as f64).sin());
        assert!((basis_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-15);
        assert!((basis_similarity(&v, &-v.clone()).unwrap() - 1.0).abs() < 1e-15);
        let a = DMatrix::from_columns(&[unit(4, 0), unit(4, 1)]);
        let b = DMatrix::from_columns(&[unit(4, 2), unit(4, 3)]);
        assert_eq!(basis_similarity(&a, &b).unwrap(), 0.0);
        assert!(basis_similarity(&a, &DMatrix::zeros(4, 3)).is_err());
    }

    #[test]
    fn identical_bases_form_one_cluster() {
        let v = DMatrix::from_fn(6, 2, |i, j| ((i * 3 + j) as f64).cos());
        let training: Vec<_> = (0..5).map(|i| (sample(&[i as f64 * 0.1, 0.0]), v.clone())).collect();
        let lib = adaptive_cluster(&training, 1e-6, 10).unwrap();
        assert_eq!(lib.n_clusters(), 1);
        assert!(lib.assignments.iter().all(|&a| a == 0));
    }

    #[test]
    fn cap_of_one_keeps_everything_together() {
        let training: Vec<_> = (0..4)
            .map(|i| (sample(&[i as f64 * 0.1]), DMatrix::from_columns(&[unit(4, i)])))
            .collect();
        let lib = adaptive_cluster(&training, 0.01, 1).unwrap();
        assert_eq!(lib.n_clusters(), 1);
        assert_eq!(lib.members(0), vec![0, 1, 2, 3]);
    }

    /// Exhaustive search for the 2-partition maximising within-group similarity.
    fn best_partition(sim: &DMatrix<f64>) -> Vec<bool> {
        let n = sim.nrows();
        let mut best = (f64::NEG_INFINITY, vec![]);
        for mask in 1u32..(1 << (n - 1)) {
            let side: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
            let mut score = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if side[i] == side[j] {
                        score += sim[(i, j)];
                    }
                }
            }
            if score > best.0 {
                best = (score, side);
            }
        }
        best.1
    }

    #[test]
    fn two_orthogonal_groups_are_separated() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut training = Vec::new();
        for i in 0..7 {
            let group = [0, 1, 1, 0, 1, 0, 0][i];
            let mut v = DMatrix::zeros(8, 2);
            for j in 0..2 {
                for k in 0..4 {
                    // Group 0 lives in rows 0..4, group 1 in rows 4..8.
                    v[(group * 4 + k, j)] = if k == j { 1.0 } else { 0.05 * rng.random_range(-1.0..1.0) };
                }
            }
            training.push((sample(&[i as f64 / 7.0 - 0.4]), crate::linalg::orthonormalize(&v)));
        }
        let lib = adaptive_cluster(&training, 0.05, 5).unwrap();
        let sim = similarity_matrix(&training).unwrap();
        let oracle = best_partition(&sim);
        assert_eq!(lib.n_clusters(), 2);
        for i in 0..7 {
            for j in 0..7 {
                assert_eq!(lib.assignments[i] == lib.assignments[j], oracle[i] == oracle[j]);
            }
        }
    }

    fn toy_library() -> ClusterLibrary {
        // Two well separated groups in 2-D.
        let pts = [[-0.9, -0.9], [-0.8, -0.7], [-0.7, -0.9], [0.8, 0.8], [0.9, 0.7], [0.7, 0.9], [0.85, 0.85]];
        ClusterLibrary {
            centers: vec![0, 3],
            assignments: vec![0, 0, 0, 1, 1, 1, 1],
            similarity: vec![1.0; 7],
            samples: pts.iter().map(|p| sample(p)).collect(),
            mac_tolerance: 0.1,
            max_clusters: 2,
        }
    }

    #[test]
    fn knn_selection() {
        let lib = toy_library();
        assert_eq!(select_cluster(&lib, &[-0.8, -0.7], 1).unwrap(), 0);
        assert_eq!(select_cluster(&lib, &[-0.8, -0.7], 7).unwrap(), 1);
        // Midpoint query: brute-force the three nearest.
        let q = [-0.05, -0.1];
        let mut d: Vec<(f64, usize)> = lib.samples.iter().enumerate().map(|(i, s)| (s.distance(&q), i)).collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut votes = [0; 2];
        for &(_, i) in &d[..3] {
            votes[lib.assignments[i]] += 1;
        }
        let expected = if votes[0] >= 2 { 0 } else { 1 };
        assert_eq!(select_cluster(&lib, &q, 3).unwrap(), expected);
    }

    #[test]
    fn refinement_hook_adds_training_data() {
        let training: Vec<_> = (0..3)
            .map(|i| (sample(&[i as f64 * 0.3 - 0.3]), DMatrix::from_columns(&[unit(3, i)])))
            .collect();
        let mut calls = 0;
        let (lib, grown) = adaptive_cluster_with(training, 0.01, 3, |c, w| {
            calls += 1;
            let mid: Vec<f64> = c.normalized.iter().zip(&w.normalized).map(|(a, b)| 0.5 * (a + b)).collect();
            vec![(sample(&mid), DMatrix::from_columns(&[unit(3, 0)]))]
        })
        .unwrap();
        assert_eq!(calls, 2);
        assert_eq!(grown.len(), 5);
        assert_eq!(lib.assignments.len(), 5);
    }

    proptest! {
        #[test]
        fn mac_is_symmetric_bounded_and_scale_free(
            a in proptest::collection::vec(-1.0f64..1.0, 5),
            b in proptest::collection::vec(-1.0f64..1.0, 5),
            s in 0.1f64..10.0,
        ) {
            let (a, b) = (DVector::from_vec(a), DVector::from_vec(b));
            prop_assume!(a.norm() > 1e-3 && b.norm() > 1e-3);
            let m = mac(a.as_view(), b.as_view()).unwrap();
            prop_assert!((0.0..=1.0).contains(&m));
            prop_assert!((m - mac(b.as_view(), a.as_view()).unwrap()).abs() < 1e-14);
            let sa = &a * -s;
            prop_assert!((m - mac(sa.as_view(), b.as_view()).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn clustering_is_deterministic_and_capped(seed in any::<u64>(), cap in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let training: Vec<_> = (0..8)
                .map(|_| {
                    let p: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let v = DMatrix::from_fn(6, 2, |_, _| rng.random_range(-1.0..1.0));
                    (sample(&p), crate::linalg::orthonormalize(&v))
                })
                .collect();
            let a = adaptive_cluster(&training, 0.05, cap).unwrap();
            let b = adaptive_cluster(&training, 0.05, cap).unwrap();
            prop_assert_eq!(&a.assignments, &b.assignments);
            prop_assert!(a.n_clusters() <= cap);
            for (c, &center) in a.centers.iter().enumerate() {
                prop_assert_eq!(a.assignments[center], c);
            }
            // Adding centres never lowers the worst similarity.
            let mut last = f64::NEG_INFINITY;
            for k in 1..=cap {
                let lib = adaptive_cluster(&training, 0.05, k).unwrap();
                prop_assert!(lib.min_similarity() >= last - 1e-15);
                last = lib.min_similarity();
            }
        }

        #[test]
        fn exact_hit_with_one_neighbour(idx in 0usize..7) {
            let lib = toy_library();
            let q = lib.samples[idx].normalized.clone();
            prop_assert_eq!(select_cluster(&lib, &q, 1).unwrap(), lib.assignments[idx]);
        }
    }
}
