//! Evaluation metrics: MSE / PSNR, a perceptual distance over unit-normalised
//! backbone features, and Fréchet video distance between embedded clip sets.
//!
//! The perceptual distance is labelled `lpips-style` in reports: it uses
//! unweighted unit-normalised features, so its numbers are not comparable to
//! calibrated reference implementations. FVD likewise reports its embedder id
//! next to every value.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::data::FrameSequence;
use crate::error::{Error, Result};
use crate::features::{FeatureExtractor, VideoEmbedder};
use crate::losses::FeatureStack;

/// PSNR reported for identical images (documented cap, avoids infinities).
pub const PSNR_CAP_DB: f64 = 100.0;

/// Mean squared difference.
pub fn mse(pred: &Array3<f64>, target: &Array3<f64>) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::invalid(format!(
            "mse shape mismatch: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let sum: f64 = pred
        .iter()
        .zip(target.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / pred.len() as f64)
}

/// `10 log10(max^2 / mse)` in dB, capped at [`PSNR_CAP_DB`].
pub fn psnr(pred: &Array3<f64>, target: &Array3<f64>, max_value: f64) -> Result<f64> {
    if !(max_value > 0.0) {
        return Err(Error::invalid(format!(
            "max_value must be positive, got {max_value}"
        )));
    }
    let e = mse(pred, target)?;
    Ok(psnr_from_mse(e, max_value))
}

pub fn psnr_from_mse(mse: f64, max_value: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (max_value * max_value / mse).log10()).min(PSNR_CAP_DB)
}

/// Perceptual distance from unit-normalised multi-layer features: per
/// spatial position the channel vector is L2-normalised, squared differences
/// are averaged per layer, then across layers.
pub fn perceptual_distance(
    a: &Array3<f64>,
    b: &Array3<f64>,
    extractor: &FeatureExtractor,
) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::invalid(format!(
            "image shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let batch = stack_two(a, b);
    let stacks = extractor.extract_features(&batch)?;
    perceptual_distance_from_features(&stacks[0], &stacks[1])
}

/// The distance computed from already-extracted feature stacks.
pub fn perceptual_distance_from_features(
    fa: &FeatureStack,
    fb: &FeatureStack,
) -> Result<f64> {
    if fa.len() != fb.len() {
        return Err(Error::invalid("feature stacks differ in layer count"));
    }
    let mut total = 0.0;
    for ((ida, la), (idb, lb)) in fa.layers().iter().zip(fb.layers()) {
        if ida != idb || la.shape() != lb.shape() {
            return Err(Error::invalid("feature stacks are incompatible"));
        }
        let na = normalize_channels(la);
        let nb = normalize_channels(lb);
        let mut sum = 0.0;
        for (x, y) in na.iter().zip(nb.iter()) {
            let d = x - y;
            sum += d * d;
        }
        total += sum / na.len() as f64;
    }
    Ok(total / fa.len() as f64)
}

/// L2-normalise each spatial position's channel vector (guarded against
/// zero vectors).
fn normalize_channels(f: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = (f.shape()[0], f.shape()[1], f.shape()[2]);
    let mut out = f.clone();
    for y in 0..h {
        for x in 0..w {
            let mut norm_sq = 0.0;
            for ci in 0..c {
                norm_sq += f[[ci, y, x]] * f[[ci, y, x]];
            }
            let norm = norm_sq.sqrt().max(1e-12);
            for ci in 0..c {
                out[[ci, y, x]] /= norm;
            }
        }
    }
    out
}

fn stack_two(a: &Array3<f64>, b: &Array3<f64>) -> ndarray::Array4<f64> {
    let mut out = ndarray::Array4::zeros((2, a.shape()[0], a.shape()[1], a.shape()[2]));
    out.index_axis_mut(Axis(0), 0).assign(a);
    out.index_axis_mut(Axis(0), 1).assign(b);
    out
}

// ---------------------------------------------------------------------------
// Fréchet distance
// ---------------------------------------------------------------------------

/// Mean and covariance of a set of embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianStats {
    pub mean: Array1<f64>,
    pub covariance: Array2<f64>,
}

/// Sample mean and unbiased sample covariance of `embeddings` (>= 2).
pub fn gaussian_stats(embeddings: &[Array1<f64>]) -> Result<GaussianStats> {
    if embeddings.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 embeddings, got {}",
            embeddings.len()
        )));
    }
    let d = embeddings[0].len();
    if embeddings.iter().any(|e| e.len() != d) {
        return Err(Error::invalid("embeddings differ in dimension"));
    }
    let n = embeddings.len() as f64;
    let mut mean = Array1::zeros(d);
    for e in embeddings {
        mean += e;
    }
    mean /= n;
    let mut cov = Array2::zeros((d, d));
    for e in embeddings {
        let c = e - &mean;
        for i in 0..d {
            for j in 0..d {
                cov[[i, j]] += c[i] * c[j];
            }
        }
    }
    cov /= n - 1.0;
    Ok(GaussianStats {
        mean,
        covariance: cov,
    })
}

fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.shape()[0], a.shape()[1], |i, j| a[[i, j]])
}

/// Eigenvalues of a symmetric matrix with the tolerance policy applied:
/// values above `-1e-6` clamp to zero, anything lower is a numerical
/// failure.
fn psd_eigenvalues(m: &DMatrix<f64>, what: &str) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let eig = SymmetricEigen::new(m.clone());
    let mut values = Vec::with_capacity(eig.eigenvalues.len());
    for &l in eig.eigenvalues.iter() {
        if l < -1e-6 {
            return Err(Error::numerical(format!(
                "{what} has eigenvalue {l}, below the -1e-6 tolerance"
            )));
        }
        values.push(l.max(0.0));
    }
    Ok((values, eig.eigenvectors))
}

fn check_symmetric(a: &Array2<f64>, what: &str) -> Result<()> {
    let n = a.shape()[0];
    if a.shape()[1] != n {
        return Err(Error::invalid(format!("{what} is not square")));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (a[[i, j]] - a[[j, i]]).abs() > 1e-8 * (1.0 + a[[i, j]].abs()) {
                return Err(Error::invalid(format!("{what} is not symmetric")));
            }
        }
    }
    Ok(())
}

/// Fréchet distance between Gaussians:
/// `|mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2})`.
///
/// The cross term uses the similarity transform: with `A = S1^{1/2}`,
/// `Tr((S1 S2)^{1/2}) = Tr((A S2 A)^{1/2})` and `A S2 A` is symmetric PSD,
/// so a symmetric eigendecomposition suffices.
pub fn frechet_distance(p: &GaussianStats, q: &GaussianStats) -> Result<f64> {
    if p.mean.len() != q.mean.len() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} vs {}",
            p.mean.len(),
            q.mean.len()
        )));
    }
    check_symmetric(&p.covariance, "covariance 1")?;
    check_symmetric(&q.covariance, "covariance 2")?;

    let s1 = to_dmatrix(&p.covariance);
    let s2 = to_dmatrix(&q.covariance);

    let (l1, v1) = psd_eigenvalues(&s1, "covariance 1")?;
    // A = S1^{1/2} via its eigendecomposition.
    let sqrt_l1 = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        l1.len(),
        l1.iter().map(|l| l.sqrt()),
    ));
    let a = &v1 * sqrt_l1 * v1.transpose();
    let mut m = &a * s2 * &a;
    // Symmetrise against floating-point drift before the second eigen.
    let mt = m.transpose();
    m = (m + mt) * 0.5;
    let (lm, _) = psd_eigenvalues(&m, "similarity-transformed product")?;
    let trace_sqrt: f64 = lm.iter().map(|l| l.sqrt()).sum();

    let mean_term: f64 = p
        .mean
        .iter()
        .zip(q.mean.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let tr1: f64 = (0..p.covariance.shape()[0]).map(|i| p.covariance[[i, i]]).sum();
    let tr2: f64 = (0..q.covariance.shape()[0]).map(|i| q.covariance[[i, i]]).sum();
    let value = mean_term + tr1 + tr2 - 2.0 * trace_sqrt;
    Ok(value.max(0.0))
}

// ---------------------------------------------------------------------------
// FVD + reports
// ---------------------------------------------------------------------------

/// One FVD measurement; the embedder id and horizon always travel with the
/// value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FvdEntry {
    pub horizon: usize,
    pub embedder_id: String,
    pub value: f64,
    pub real_clips: usize,
    pub predicted_clips: usize,
}

/// Fréchet video distance between two clip sets under `embedder`. Both sets
/// need >= 2 clips and every clip the same length (the horizon).
pub fn fvd(
    real_clips: &[FrameSequence],
    pred_clips: &[FrameSequence],
    embedder: &VideoEmbedder,
) -> Result<(f64, FvdEntry)> {
    if real_clips.len() < 2 || pred_clips.len() < 2 {
        return Err(Error::invalid(format!(
            "fvd needs >= 2 clips per set, got {} real / {} predicted",
            real_clips.len(),
            pred_clips.len()
        )));
    }
    let horizon = real_clips[0].len();
    if real_clips
        .iter()
        .chain(pred_clips.iter())
        .any(|c| c.len() != horizon)
    {
        return Err(Error::invalid("clips must share one horizon length"));
    }
    let embed_all = |clips: &[FrameSequence]| -> Result<Vec<Array1<f64>>> {
        clips.iter().map(|c| embedder.embed_video(c)).collect()
    };
    let real_emb = embed_all(real_clips)?;
    let pred_emb = embed_all(pred_clips)?;
    let value = frechet_distance(&gaussian_stats(&real_emb)?, &gaussian_stats(&pred_emb)?)?;
    Ok((
        value,
        FvdEntry {
            horizon,
            embedder_id: embedder.id(),
            value,
            real_clips: real_clips.len(),
            predicted_clips: pred_clips.len(),
        },
    ))
}

/// Machine-readable evaluation record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricReport {
    /// Mean single-step MSE over the evaluation set.
    pub mse: f64,
    /// Mean single-step PSNR in dB (per-pair values capped at 100).
    pub psnr_db: f64,
    /// Mean single-step perceptual distance (unweighted unit-normalised
    /// features; not comparable to calibrated reference numbers).
    pub lpips_style: f64,
    pub fvd: Vec<FvdEntry>,
    /// Number of single-step evaluation pairs.
    pub sample_count: usize,
    pub psnr_cap_db: f64,
}

impl MetricReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::io(path, format!("report encode: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<MetricReport> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::io(path, format!("report decode: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{TapSpec, TemporalPooling};
    use ndarray::{arr1, arr2, Array3, Array4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_image(seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((1, 16, 16), |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn identical_images_cap_psnr() {
        let img = rand_image(1);
        assert_eq!(mse(&img, &img).unwrap(), 0.0);
        assert_eq!(psnr(&img, &img, 1.0).unwrap(), 100.0);
    }

    #[test]
    fn psnr_formula_is_exact() {
        assert_eq!(psnr_from_mse(0.01, 1.0), 20.0);
    }

    #[test]
    fn constant_offset_mse() {
        let a = Array3::from_elem((1, 4, 4), 0.25);
        let b = Array3::from_elem((1, 4, 4), 0.75);
        assert!((mse(&a, &b).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn mse_psnr_argument_errors() {
        let a = Array3::zeros((1, 4, 4));
        let b = Array3::zeros((1, 5, 5));
        assert!(mse(&a, &b).is_err());
        assert!(psnr(&a, &a, 0.0).is_err());
    }

    #[test]
    fn psnr_strictly_decreases_in_mse() {
        let mut prev = f64::INFINITY;
        for i in 1..200 {
            let m = i as f64 * 1e-4;
            let p = psnr_from_mse(m, 1.0);
            assert!(p < prev, "psnr not strictly decreasing at mse {m}");
            prev = p;
        }
    }

    fn extractor() -> FeatureExtractor {
        FeatureExtractor::new(TapSpec::tiny(5), 1).unwrap()
    }

    #[test]
    fn perceptual_self_distance_zero_and_symmetric() {
        let ex = extractor();
        let a = rand_image(2);
        let b = rand_image(3);
        assert_eq!(perceptual_distance(&a, &a, &ex).unwrap(), 0.0);
        let d_ab = perceptual_distance(&a, &b, &ex).unwrap();
        let d_ba = perceptual_distance(&b, &a, &ex).unwrap();
        assert_eq!(d_ab, d_ba);
        assert!(d_ab > 0.0);
    }

    #[test]
    fn perceptual_distance_matches_straight_line_recompute() {
        // Independent recomputation from raw features, written as the spec
        // describes the metric rather than as the implementation does.
        let ex = extractor();
        let a = rand_image(4);
        let b = rand_image(5);
        let d = perceptual_distance(&a, &b, &ex).unwrap();

        let feats = |img: &Array3<f64>| {
            let mut batch = Array4::zeros((1, 1, 16, 16));
            batch.index_axis_mut(ndarray::Axis(0), 0).assign(img);
            ex.extract_features(&batch).unwrap().remove(0)
        };
        let fa = feats(&a);
        let fb = feats(&b);
        let mut layer_means = Vec::new();
        for ((_, la), (_, lb)) in fa.layers().iter().zip(fb.layers()) {
            let (c, h, w) = (la.shape()[0], la.shape()[1], la.shape()[2]);
            let mut sum = 0.0;
            for y in 0..h {
                for x in 0..w {
                    let norm = |f: &Array3<f64>| {
                        (0..c).map(|ci| f[[ci, y, x]] * f[[ci, y, x]]).sum::<f64>().sqrt()
                    };
                    let (na, nb) = (norm(la).max(1e-12), norm(lb).max(1e-12));
                    for ci in 0..c {
                        let diff = la[[ci, y, x]] / na - lb[[ci, y, x]] / nb;
                        sum += diff * diff;
                    }
                }
            }
            layer_means.push(sum / (c * h * w) as f64);
        }
        let expected: f64 = layer_means.iter().sum::<f64>() / layer_means.len() as f64;
        assert!((d - expected).abs() < 1e-12, "{d} vs {expected}");
    }

    #[test]
    fn stats_of_identical_embeddings() {
        let v = arr1(&[0.5, -1.0, 2.0]);
        let stats = gaussian_stats(&[v.clone(), v.clone(), v.clone()]).unwrap();
        assert_eq!(stats.mean, v);
        assert!(stats.covariance.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn stats_hand_computed_case() {
        // {(0,0), (2,0)}: mean (1,0), unbiased covariance [[2,0],[0,0]].
        let stats = gaussian_stats(&[arr1(&[0.0, 0.0]), arr1(&[2.0, 0.0])]).unwrap();
        assert_eq!(stats.mean, arr1(&[1.0, 0.0]));
        assert_eq!(stats.covariance, arr2(&[[2.0, 0.0], [0.0, 0.0]]));
    }

    #[test]
    fn stats_order_invariant_and_arity_checked() {
        let a = arr1(&[1.0, 2.0]);
        let b = arr1(&[-1.0, 0.5]);
        let c = arr1(&[0.25, -2.0]);
        let s1 = gaussian_stats(&[a.clone(), b.clone(), c.clone()]).unwrap();
        let s2 = gaussian_stats(&[c, a.clone(), b]).unwrap();
        assert!((&s1.mean - &s2.mean).iter().all(|x| x.abs() < 1e-12));
        assert!((&s1.covariance - &s2.covariance).iter().all(|x| x.abs() < 1e-12));
        assert!(gaussian_stats(&[a]).is_err());
    }

    #[test]
    fn frechet_identical_is_zero() {
        let stats = gaussian_stats(&[
            arr1(&[0.0, 1.0]),
            arr1(&[1.0, -1.0]),
            arr1(&[2.0, 0.5]),
        ])
        .unwrap();
        let d = frechet_distance(&stats, &stats).unwrap();
        assert!(d.abs() < 1e-6, "self-distance {d}");
    }

    #[test]
    fn frechet_one_dimensional_closed_forms() {
        let make = |mu: f64, var: f64| GaussianStats {
            mean: arr1(&[mu]),
            covariance: arr2(&[[var]]),
        };
        // N(0,1) vs N(3,1): 9 + (1+1-2) = 9.
        let d = frechet_distance(&make(0.0, 1.0), &make(3.0, 1.0)).unwrap();
        assert!((d - 9.0).abs() < 1e-8);
        // N(0,1) vs N(0,4): 0 + (1+4-2*2) = 1.
        let d = frechet_distance(&make(0.0, 1.0), &make(0.0, 4.0)).unwrap();
        assert!((d - 1.0).abs() < 1e-8);
    }

    #[test]
    fn frechet_diagonal_matches_per_dimension_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let d = 4;
            let mu1 = Array1::from_shape_fn(d, |_| rng.random_range(-2.0..2.0));
            let mu2 = Array1::from_shape_fn(d, |_| rng.random_range(-2.0..2.0));
            let v1 = Array1::from_shape_fn(d, |_| rng.random_range(0.1..3.0));
            let v2 = Array1::from_shape_fn(d, |_| rng.random_range(0.1..3.0));
            let p = GaussianStats {
                mean: mu1.clone(),
                covariance: Array2::from_diag(&v1),
            };
            let q = GaussianStats {
                mean: mu2.clone(),
                covariance: Array2::from_diag(&v2),
            };
            let fd = frechet_distance(&p, &q).unwrap();
            let expected: f64 = (0..d)
                .map(|i| {
                    let dm = mu1[i] - mu2[i];
                    let ds = v1[i].sqrt() - v2[i].sqrt();
                    dm * dm + ds * ds
                })
                .sum();
            assert!(
                (fd - expected).abs() < 1e-8,
                "diagonal case: {fd} vs {expected}"
            );
        }
    }

    fn random_psd(d: usize, rng: &mut ChaCha8Rng) -> GaussianStats {
        let r = Array2::from_shape_fn((d, d), |_| rng.random_range(-1.0..1.0));
        let mut cov = Array2::zeros((d, d));
        for i in 0..d {
            for j in 0..d {
                let mut s = 0.0;
                for k in 0..d {
                    s += r[[i, k]] * r[[j, k]];
                }
                cov[[i, j]] = s / d as f64;
            }
        }
        GaussianStats {
            mean: Array1::from_shape_fn(d, |_| rng.random_range(-1.0..1.0)),
            covariance: cov,
        }
    }

    #[test]
    fn frechet_symmetric_and_nonnegative_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..1000 {
            let p = random_psd(3, &mut rng);
            let q = random_psd(3, &mut rng);
            let ab = frechet_distance(&p, &q).unwrap();
            let ba = frechet_distance(&q, &p).unwrap();
            assert!(ab >= 0.0);
            assert!((ab - ba).abs() < 1e-8, "asymmetry: {ab} vs {ba}");
        }
    }

    #[test]
    fn frechet_rejects_bad_inputs() {
        let p = GaussianStats {
            mean: arr1(&[0.0]),
            covariance: arr2(&[[1.0]]),
        };
        let q = GaussianStats {
            mean: arr1(&[0.0, 0.0]),
            covariance: arr2(&[[1.0, 0.0], [0.0, 1.0]]),
        };
        assert!(matches!(
            frechet_distance(&p, &q),
            Err(Error::InvalidArgument(_))
        ));
        // Decisively non-PSD covariance is a numerical failure.
        let bad = GaussianStats {
            mean: arr1(&[0.0, 0.0]),
            covariance: arr2(&[[1.0, 0.0], [0.0, -1.0]]),
        };
        assert!(matches!(
            frechet_distance(&bad, &q),
            Err(Error::Numerical(_))
        ));
    }

    fn clip(seed: u64, len: usize) -> FrameSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = Array4::from_shape_fn((len, 1, 16, 16), |_| rng.random_range(0.0..1.0));
        FrameSequence::new(frames, 0.1).unwrap()
    }

    fn embedder() -> VideoEmbedder {
        VideoEmbedder::new(extractor(), TemporalPooling::Mean)
    }

    #[test]
    fn fvd_identical_sets_near_zero() {
        let e = embedder();
        let clips: Vec<FrameSequence> = (0..4).map(|i| clip(i, 5)).collect();
        let (v, entry) = fvd(&clips, &clips, &e).unwrap();
        assert!(v.abs() < 1e-8, "self fvd {v}");
        assert_eq!(entry.horizon, 5);
        assert_eq!(entry.embedder_id, e.id());
    }

    #[test]
    fn fvd_separated_sets_positive() {
        let e = embedder();
        let dark: Vec<FrameSequence> = (0..3)
            .map(|i| {
                let v = 0.05 + 0.01 * i as f64;
                FrameSequence::new(Array4::from_elem((4, 1, 16, 16), v), 0.1).unwrap()
            })
            .collect();
        let bright: Vec<FrameSequence> = (0..3)
            .map(|i| {
                let v = 0.9 - 0.01 * i as f64;
                FrameSequence::new(Array4::from_elem((4, 1, 16, 16), v), 0.1).unwrap()
            })
            .collect();
        let (v, _) = fvd(&dark, &bright, &e).unwrap();
        assert!(v > 0.0, "separated sets gave fvd {v}");
    }

    #[test]
    fn fvd_matches_recomputation_from_stored_embeddings() {
        let e = embedder();
        let real: Vec<FrameSequence> = (10..14).map(|i| clip(i, 6)).collect();
        let pred: Vec<FrameSequence> = (20..24).map(|i| clip(i, 6)).collect();
        let (v, _) = fvd(&real, &pred, &e).unwrap();

        let emb = |clips: &[FrameSequence]| -> Vec<Array1<f64>> {
            clips.iter().map(|c| e.embed_video(c).unwrap()).collect()
        };
        let expected = frechet_distance(
            &gaussian_stats(&emb(&real)).unwrap(),
            &gaussian_stats(&emb(&pred)).unwrap(),
        )
        .unwrap();
        assert_eq!(v.to_bits(), expected.to_bits());
    }

    #[test]
    fn fvd_argument_errors() {
        let e = embedder();
        let one = vec![clip(0, 4)];
        let two = vec![clip(1, 4), clip(2, 4)];
        assert!(fvd(&one, &two, &e).is_err());
        let ragged = vec![clip(3, 4), clip(4, 5)];
        assert!(fvd(&ragged, &two, &e).is_err());
    }

    #[test]
    fn report_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        let report = MetricReport {
            mse: 0.01,
            psnr_db: 20.0,
            lpips_style: 0.2,
            fvd: vec![FvdEntry {
                horizon: 10,
                embedder_id: "tiny-conv[conv1]/mean".into(),
                value: 12.5,
                real_clips: 8,
                predicted_clips: 8,
            }],
            sample_count: 8,
            psnr_cap_db: PSNR_CAP_DB,
        };
        report.save(&path).unwrap();
        assert_eq!(MetricReport::load(&path).unwrap(), report);
    }
}
