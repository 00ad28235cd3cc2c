//! Tracklet-level appearance affinity.
//!
//! The refinement chain runs: average the observation features per tracklet,
//! subtract the per-camera feature mean, pull each feature towards its
//! nearest neighbours, refine pairwise similarities with k-reciprocal
//! reranking and finally zero masked pairs (the Hadamard product with the
//! temporal mask).

use serde::{Deserialize, Serialize};

use crate::numeric::{cosine, mean_vector, normalize, Matrix};
use crate::types::Tracklet;
use crate::zones::DbtmMatrix;
use crate::{Error, Real, Result, Scalar};

/// Which transform produced a similarity matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimilarityStage {
    /// Plain cosine similarities of tracklet features.
    Raw,
    /// After k-reciprocal reranking.
    Reranked,
    /// After masking with the DBTM matrix.
    Masked,
}

/// Pairwise tracklet similarity with its provenance tag.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix<T = Scalar> {
    pub values: Matrix<T>,
    pub stage: SimilarityStage,
}

impl<T: Real> SimilarityMatrix<T> {
    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }
}

/// Parameters of the k-reciprocal reranking step.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RerankParams {
    pub k1: usize,
    pub k2: usize,
    pub lambda: Scalar,
}

impl Default for RerankParams {
    fn default() -> Self {
        RerankParams {
            k1: 20,
            k2: 6,
            lambda: 0.3,
        }
    }
}

/// Average feature of a tracklet, L2-normalized.
pub fn tracklet_feature(tracklet: &Tracklet) -> Result<Vec<Scalar>> {
    if tracklet.observations.is_empty() {
        return Err(Error::Numeric(format!(
            "tracklet {}/{} has no observations",
            tracklet.camera_id, tracklet.local_id
        )));
    }
    let rows: Vec<&[Scalar]> = tracklet
        .observations
        .iter()
        .map(|o| o.feature.as_slice())
        .collect();
    let mut mean = mean_vector(&rows);
    if !normalize(&mut mean) {
        return Err(Error::Numeric(format!(
            "tracklet {}/{} has a zero mean feature",
            tracklet.camera_id, tracklet.local_id
        )));
    }
    Ok(mean)
}

/// Subtract the per-camera mean from every feature and re-normalize.
///
/// Cameras with a single tracklet are left unchanged, as is any feature that
/// collapses to zero after subtraction; the indices of untouched features are
/// returned alongside a warning in the log.
pub fn camera_bias_normalize<T: Real>(
    features: &[Vec<T>],
    cameras: &[u32],
) -> (Vec<Vec<T>>, Vec<usize>) {
    assert_eq!(features.len(), cameras.len());
    let mut out: Vec<Vec<T>> = features.to_vec();
    let mut untouched = Vec::new();
    let mut camera_ids: Vec<u32> = cameras.to_vec();
    camera_ids.sort_unstable();
    camera_ids.dedup();
    for cam in camera_ids {
        let idx: Vec<usize> = (0..features.len()).filter(|&i| cameras[i] == cam).collect();
        if idx.len() < 2 {
            continue;
        }
        let rows: Vec<&[T]> = idx.iter().map(|&i| features[i].as_slice()).collect();
        let mean = mean_vector(&rows);
        for &i in &idx {
            let mut shifted: Vec<T> = features[i]
                .iter()
                .zip(mean.iter())
                .map(|(&f, &m)| f - m)
                .collect();
            if normalize(&mut shifted) {
                out[i] = shifted;
            } else {
                log::warn!(
                    "camera {cam}: feature {i} equals the camera mean, left unchanged"
                );
                untouched.push(i);
            }
        }
    }
    (out, untouched)
}

/// Replace each feature by the normalized mean of itself and its `k`
/// cosine-nearest neighbours (computed from the input, not sequentially).
pub fn neighbor_update<T: Real>(features: &[Vec<T>], k: usize) -> Vec<Vec<T>> {
    let m = features.len();
    if k == 0 || m < 2 {
        return features.to_vec();
    }
    let k = k.min(m - 1);
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        let mut others: Vec<(usize, T)> = (0..m)
            .filter(|&j| j != i)
            .map(|j| {
                (
                    j,
                    cosine(&features[i], &features[j]).expect("equal dimensions"),
                )
            })
            .collect();
        others.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.0.cmp(&b.0))
        });
        let mut rows: Vec<&[T]> = vec![features[i].as_slice()];
        for &(j, _) in others.iter().take(k) {
            rows.push(features[j].as_slice());
        }
        let mut mean = mean_vector(&rows);
        if !normalize(&mut mean) {
            mean = features[i].clone();
        }
        out.push(mean);
    }
    out
}

/// Cosine similarity matrix of the features (the raw stage).
pub fn raw_similarity<T: Real>(features: &[Vec<T>]) -> Result<SimilarityMatrix<T>> {
    let m = features.len();
    let dim = features.first().map(|f| f.len()).unwrap_or(0);
    for (i, f) in features.iter().enumerate() {
        if f.len() != dim {
            return Err(Error::Dimension(format!(
                "feature {i} has dimension {}, expected {dim}",
                f.len()
            )));
        }
    }
    let mut values = Matrix::filled(m, m, T::zero());
    for i in 0..m {
        values[(i, i)] = T::one();
        for j in (i + 1)..m {
            let s = cosine(&features[i], &features[j])?;
            values[(i, j)] = s;
            values[(j, i)] = s;
        }
    }
    Ok(SimilarityMatrix {
        values,
        stage: SimilarityStage::Raw,
    })
}

/// k-reciprocal reranking.
///
/// Produces `1 - d` where `d = lambda * d_cos + (1 - lambda) * d_jaccard`:
/// the original cosine distance blended with the Jaccard distance between
/// k-reciprocal expansion neighbourhoods. With `lambda = 1` this degenerates
/// to the raw cosine similarity. `k1` and `k2` are clamped to `m - 1`.
pub fn rerank<T: Real>(features: &[Vec<T>], params: &RerankParams) -> Result<SimilarityMatrix<T>> {
    let m = features.len();
    let raw = raw_similarity(features)?;
    if m < 2 {
        return Ok(SimilarityMatrix {
            values: raw.values,
            stage: SimilarityStage::Reranked,
        });
    }
    let k1 = params.k1.clamp(1, m - 1);
    let k2 = params.k2.clamp(1, m - 1);
    let lambda = T::from_f64(params.lambda).unwrap();

    // original cosine distances
    let dist = Matrix::from_fn(m, m, |i, j| T::one() - raw.values[(i, j)]);

    // ascending distance ranking per row, ties by index; self sits first
    let rank: Vec<Vec<usize>> = (0..m)
        .map(|i| {
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&a, &b| {
                dist[(i, a)]
                    .partial_cmp(&dist[(i, b)])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.cmp(&b))
            });
            order
        })
        .collect();

    let reciprocal = |i: usize, k: usize| -> Vec<usize> {
        let forward = &rank[i][..(k + 1).min(m)];
        forward
            .iter()
            .copied()
            .filter(|&j| rank[j][..(k + 1).min(m)].contains(&i))
            .collect()
    };

    // expansion sets: add a candidate's half-k reciprocal set when two thirds
    // of it already overlap the base set
    let half_k1 = ((k1 as f64) / 2.0).round() as usize;
    let mut v = Matrix::filled(m, m, T::zero());
    for i in 0..m {
        let base = reciprocal(i, k1);
        let mut expansion = base.clone();
        for &candidate in &base {
            let candidate_set = reciprocal(candidate, half_k1);
            let overlap = candidate_set.iter().filter(|j| base.contains(j)).count();
            if 3 * overlap > 2 * candidate_set.len() {
                expansion.extend_from_slice(&candidate_set);
            }
        }
        expansion.sort_unstable();
        expansion.dedup();
        let weights: Vec<T> = expansion.iter().map(|&j| (-dist[(i, j)]).exp()).collect();
        let total: T = weights.iter().copied().sum();
        for (&j, &w) in expansion.iter().zip(weights.iter()) {
            v[(i, j)] = w / total;
        }
    }

    // query expansion over the k2 nearest rows
    if k2 > 1 {
        let mut vq = Matrix::filled(m, m, T::zero());
        let kf = T::from_usize(k2).unwrap();
        for i in 0..m {
            for &r in &rank[i][..k2] {
                for j in 0..m {
                    vq[(i, j)] = vq[(i, j)] + v[(r, j)] / kf;
                }
            }
        }
        v = vq;
    }

    let mut values = Matrix::filled(m, m, T::zero());
    for i in 0..m {
        for j in i..m {
            let mut min_sum = T::zero();
            for k in 0..m {
                min_sum = min_sum + v[(i, k)].min(v[(j, k)]);
            }
            let two = T::one() + T::one();
            let jaccard = T::one() - min_sum / (two - min_sum);
            let final_dist = lambda * dist[(i, j)] + (T::one() - lambda) * jaccard;
            let s = T::one() - final_dist;
            values[(i, j)] = s;
            values[(j, i)] = s;
        }
    }
    Ok(SimilarityMatrix {
        values,
        stage: SimilarityStage::Reranked,
    })
}

/// Hadamard product of the similarity matrix with the binary mask.
pub fn apply_mask<T: Real>(s: &SimilarityMatrix<T>, mask: &DbtmMatrix) -> Result<SimilarityMatrix<T>> {
    let m = s.len();
    if mask.len() != m {
        return Err(Error::Dimension(format!(
            "similarity is {m}x{m} but mask is {}x{}",
            mask.len(),
            mask.len()
        )));
    }
    let values = Matrix::from_fn(m, m, |i, j| {
        if mask.allowed(i, j) {
            s.values[(i, j)]
        } else {
            T::zero()
        }
    });
    Ok(SimilarityMatrix {
        values,
        stage: SimilarityStage::Masked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{BBox, Tracklet, TrackletObservation};

    fn unit(v: Vec<Scalar>) -> Vec<Scalar> {
        let mut v = v;
        assert!(normalize(&mut v));
        v
    }

    fn tracklet_with(features: Vec<Vec<Scalar>>) -> Tracklet {
        Tracklet {
            camera_id: 1,
            local_id: 1,
            observations: features
                .into_iter()
                .enumerate()
                .map(|(i, f)| TrackletObservation {
                    t: i as u32,
                    bbox: BBox::new(0.0, 0.0, 1.0, 1.0),
                    feature: f,
                    feature_index: i,
                })
                .collect(),
            endpoints: None,
        }
    }

    #[test]
    fn tracklet_feature_of_constant_features() {
        let f = unit(vec![0.2, 0.9]);
        let t = tracklet_with(vec![f.clone(), f.clone(), f.clone()]);
        let got = tracklet_feature(&t).unwrap();
        for (a, b) in got.iter().zip(f.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn tracklet_feature_averages_then_normalizes() {
        let t = tracklet_with(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let got = tracklet_feature(&t).unwrap();
        let e = (2.0_f64).sqrt() / 2.0;
        assert!((got[0] - e).abs() < 1e-12);
        assert!((got[1] - e).abs() < 1e-12);
    }

    #[test]
    fn tracklet_feature_single_observation() {
        let f = unit(vec![0.6, 0.8]);
        let t = tracklet_with(vec![f.clone()]);
        assert_eq!(tracklet_feature(&t).unwrap(), f);
    }

    #[test]
    fn tracklet_feature_rejects_antipodal_features() {
        let t = tracklet_with(vec![vec![1.0, 0.0], vec![-1.0, 0.0]]);
        assert!(tracklet_feature(&t).is_err());
    }

    #[test]
    fn bias_normalize_leaves_identical_features_with_warning() {
        let f = unit(vec![1.0, 0.0]);
        let (out, untouched) = camera_bias_normalize(&[f.clone(), f.clone()], &[1, 1]);
        assert_eq!(out[0], f);
        assert_eq!(out[1], f);
        assert_eq!(untouched, vec![0, 1]);
    }

    #[test]
    fn bias_normalize_matches_hand_computation() {
        let (out, untouched) =
            camera_bias_normalize(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[1, 1]);
        assert!(untouched.is_empty());
        let e = (2.0_f64).sqrt() / 2.0;
        assert!((out[0][0] - e).abs() < 1e-12 && (out[0][1] + e).abs() < 1e-12);
        assert!((out[1][0] + e).abs() < 1e-12 && (out[1][1] - e).abs() < 1e-12);
    }

    #[test]
    fn bias_normalize_skips_single_tracklet_cameras() {
        let f = unit(vec![0.6, 0.8]);
        let (out, _) = camera_bias_normalize(std::slice::from_ref(&f), &[1]);
        assert_eq!(out[0], f);
    }

    #[test]
    fn neighbor_update_k0_is_identity() {
        let fs = vec![unit(vec![1.0, 0.0]), unit(vec![0.0, 1.0])];
        assert_eq!(neighbor_update(&fs, 0), fs);
    }

    #[test]
    fn neighbor_update_identical_vectors_unchanged() {
        let f = unit(vec![1.0, 0.0]);
        let fs = vec![f.clone(), f.clone()];
        let out = neighbor_update(&fs, 1);
        for o in out {
            for (a, b) in o.iter().zip(f.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn neighbor_update_matches_brute_force_means() {
        // three unit vectors in the plane at angles 0, 0.2, 1.2 rad
        let angle = |a: Scalar| vec![a.cos(), a.sin()];
        let fs = vec![angle(0.0), angle(0.2), angle(1.2)];
        let out = neighbor_update(&fs, 1);
        // nearest neighbours by cosine: 0<->1, 2->1
        let expect = |a: &Vec<Scalar>, b: &Vec<Scalar>| {
            let mut m = vec![(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
            assert!(normalize(&mut m));
            m
        };
        let cases = [
            expect(&fs[0], &fs[1]),
            expect(&fs[1], &fs[0]),
            expect(&fs[2], &fs[1]),
        ];
        for (got, want) in out.iter().zip(cases.iter()) {
            for (a, b) in got.iter().zip(want.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn neighbor_update_clamps_large_k() {
        let fs = vec![unit(vec![1.0, 0.0]), unit(vec![0.0, 1.0])];
        let a = neighbor_update(&fs, 1);
        let b = neighbor_update(&fs, 10);
        assert_eq!(a, b);
    }

    #[test]
    fn rerank_lambda_one_equals_raw() {
        let fs: Vec<Vec<Scalar>> = vec![
            unit(vec![1.0, 0.1, 0.0]),
            unit(vec![0.9, 0.2, 0.1]),
            unit(vec![0.0, 1.0, 0.3]),
            unit(vec![0.1, 0.9, 0.2]),
        ];
        let raw = raw_similarity(&fs).unwrap();
        let params = RerankParams {
            k1: 3,
            k2: 2,
            lambda: 1.0,
        };
        let reranked = rerank(&fs, &params).unwrap();
        for i in 0..fs.len() {
            for j in 0..fs.len() {
                assert!(
                    (raw.values[(i, j)] - reranked.values[(i, j)]).abs() < 1e-9,
                    "({i},{j})"
                );
            }
        }
    }

    #[test]
    fn rerank_two_items_keeps_ordering() {
        let fs = vec![unit(vec![1.0, 0.0]), unit(vec![0.6, 0.8])];
        let raw = raw_similarity(&fs).unwrap();
        let out = rerank(&fs, &RerankParams::default()).unwrap();
        assert_eq!(out.stage, SimilarityStage::Reranked);
        assert!(out.values[(0, 0)] > out.values[(0, 1)]);
        assert!(raw.values[(0, 0)] > raw.values[(0, 1)]);
    }

    #[test]
    fn rerank_sharpens_tight_triplets() {
        // two tight triplets; cross-triplet similarity must drop after reranking
        let cluster = |base: [Scalar; 4], eps: Scalar, k: usize| -> Vec<Scalar> {
            let mut v = base.to_vec();
            v[k % 4] += eps;
            unit(v)
        };
        let mut fs = Vec::new();
        for k in 0..3 {
            fs.push(cluster([1.0, 0.3, 0.0, 0.0], 0.02 * (k as Scalar + 1.0), k));
        }
        for k in 0..3 {
            fs.push(cluster([0.0, 0.3, 1.0, 0.0], 0.02 * (k as Scalar + 1.0), k));
        }
        let raw = raw_similarity(&fs).unwrap();
        let out = rerank(
            &fs,
            &RerankParams {
                k1: 2,
                k2: 2,
                lambda: 0.3,
            },
        )
        .unwrap();
        for i in 0..3 {
            for j in 3..6 {
                assert!(
                    out.values[(i, j)] < raw.values[(i, j)],
                    "cross-cluster ({i},{j}) did not drop: {} vs {}",
                    out.values[(i, j)],
                    raw.values[(i, j)]
                );
            }
        }
    }

    #[test]
    fn transforms_keep_unit_norm() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let fs: Vec<Vec<Scalar>> = (0..12)
            .map(|_| unit((0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()))
            .collect();
        let cams: Vec<u32> = (0..12).map(|i| (i % 3) as u32).collect();
        let (biased, untouched) = camera_bias_normalize(&fs, &cams);
        for (i, f) in biased.iter().enumerate() {
            if !untouched.contains(&i) {
                assert!((crate::numeric::norm(f) - 1.0).abs() < 1e-6);
            }
        }
        for f in neighbor_update(&biased, 2) {
            assert!((crate::numeric::norm(&f) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn mask_all_ones_is_identity() {
        let fs = vec![unit(vec![1.0, 0.0]), unit(vec![0.6, 0.8])];
        let s = raw_similarity(&fs).unwrap();
        let masked = apply_mask(&s, &DbtmMatrix::all_ones(2)).unwrap();
        assert_eq!(masked.values, s.values);
        assert_eq!(masked.stage, SimilarityStage::Masked);
    }

    #[test]
    fn mask_zero_entries_zero_similarity() {
        use crate::types::{CameraTopology, TrackletEndpoints};
        let fs = vec![unit(vec![1.0, 0.0]), unit(vec![1.0, 0.0])];
        let s = raw_similarity(&fs).unwrap();
        // build a mask with one conflicting pair
        let topo = CameraTopology::new(vec![41, 42]).unwrap();
        let mk = |cam: u32, e: TrackletEndpoints| Tracklet {
            camera_id: cam,
            local_id: 0,
            observations: vec![TrackletObservation {
                t: e.t_s,
                bbox: BBox::new(0.0, 0.0, 1.0, 1.0),
                feature: vec![1.0, 0.0],
                feature_index: 0,
            }],
            endpoints: Some(e),
        };
        let a = mk(41, TrackletEndpoints { z_s: 3, z_e: 4, t_s: 100, t_e: 200 });
        let b = mk(42, TrackletEndpoints { z_s: 4, z_e: 3, t_s: 90, t_e: 120 });
        let mask = crate::zones::build_dbtm(&[a, b], &topo).unwrap();
        assert!(!mask.allowed(0, 1));
        let masked = apply_mask(&s, &mask).unwrap();
        assert_eq!(masked.values[(0, 1)], 0.0);
        assert_eq!(masked.values[(1, 0)], 0.0);
        assert_eq!(masked.values[(0, 0)], 1.0);
    }

    #[test]
    fn mask_never_increases_entries() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let fs: Vec<Vec<Scalar>> = (0..8)
            .map(|_| unit((0..4).map(|_| rng.gen_range(0.0..1.0)).collect()))
            .collect();
        let s = raw_similarity(&fs).unwrap();
        let masked = apply_mask(&s, &DbtmMatrix::all_ones(8)).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                assert!(masked.values[(i, j)] <= s.values[(i, j)] + 1e-12);
            }
        }
    }

    #[test]
    fn mask_dimension_mismatch_is_an_error() {
        let fs = vec![unit(vec![1.0, 0.0]), unit(vec![0.6, 0.8])];
        let s = raw_similarity(&fs).unwrap();
        assert!(apply_mask(&s, &DbtmMatrix::all_ones(3)).is_err());
    }
}
