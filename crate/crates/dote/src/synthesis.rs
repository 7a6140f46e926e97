//! Applying a trained model to new images, and the bicubic resampling
//! pipeline that builds super-resolution pairs.
//!
//! Synthesis runs the learned pipeline end to end: infer sparse feature
//! maps of the source image against the source bank, transport them
//! through the channel mapping, and reconstruct with the target bank.
//! Super-resolution is the special case where the "source modality" is a
//! bicubically degraded and re-upsampled copy of the target, so both
//! live on the same grid like any registered pair.

use crate::csc::{infer_feature_maps, reconstruct};
use crate::error::{DoteError, Result};
use crate::grid::Tensor;
use crate::train::DoteModel;
use crate::SolverConfig;

/// A registered pair: source and target on the same grid, intensities
/// in [0, 1].
#[derive(Debug, Clone)]
pub struct ImagePair {
    pub id: String,
    pub source: Tensor,
    pub target: Tensor,
}

/// An ordered set of registered pairs with free-form modality labels.
#[derive(Debug, Clone)]
pub struct PairedDataset {
    pairs: Vec<ImagePair>,
    pub source_modality: String,
    pub target_modality: String,
}

const INTENSITY_SLACK: f64 = 1e-9;

fn check_normalized(t: &Tensor, what: &str) -> Result<()> {
    let ok = t
        .data()
        .iter()
        .all(|&v| (-INTENSITY_SLACK..=1.0 + INTENSITY_SLACK).contains(&v));
    if !ok {
        return Err(DoteError::invalid(format!(
            "{what} has intensities outside [0, 1]"
        )));
    }
    Ok(())
}

impl PairedDataset {
    pub fn new(
        pairs: Vec<ImagePair>,
        source_modality: impl Into<String>,
        target_modality: impl Into<String>,
    ) -> Result<Self> {
        if pairs.is_empty() {
            return Err(DoteError::invalid("dataset needs at least one pair"));
        }
        for p in &pairs {
            if p.source.dims() != p.target.dims() {
                return Err(DoteError::dims(format!(
                    "pair {:?}: source dims {:?} do not match target dims {:?}",
                    p.id,
                    p.source.dims(),
                    p.target.dims()
                )));
            }
            check_normalized(&p.source, &format!("pair {:?} source", p.id))?;
            check_normalized(&p.target, &format!("pair {:?} target", p.id))?;
        }
        Ok(PairedDataset {
            pairs,
            source_modality: source_modality.into(),
            target_modality: target_modality.into(),
        })
    }

    pub fn pairs(&self) -> &[ImagePair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// True when every pair lives on one common grid.
    pub fn uniform_dims(&self) -> Option<&[usize]> {
        let dims = self.pairs[0].source.dims();
        self.pairs
            .iter()
            .all(|p| p.source.dims() == dims)
            .then_some(dims)
    }
}

/// Clamps every intensity into [0, 1].
pub fn clamp01(t: &Tensor) -> Tensor {
    let data = t.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
    Tensor::new(t.dims().to_vec(), data).expect("clamping preserves validity")
}

fn check_synth_input(model: &DoteModel, x_test: &Tensor) -> Result<()> {
    model.fx.check_compatible(x_test.dims())?;
    let ok = x_test.data().iter().all(|&v| (-0.01..=1.01).contains(&v));
    if !ok {
        return Err(DoteError::invalid(
            "synthesis input must be normalized to [0, 1]",
        ));
    }
    Ok(())
}

/// Full synthesis pipeline without the final clamp; the output is linear
/// in the channel mapping for fixed inferred maps.
pub fn synthesize_raw(model: &DoteModel, x_test: &Tensor, cfg: &SolverConfig) -> Result<Tensor> {
    check_synth_input(model, x_test)?;
    let (source_maps, _) = infer_feature_maps(x_test, &model.fx, cfg.lambda, cfg)?;
    let target_maps = model.w.transport(&source_maps)?;
    reconstruct(&model.fy, &target_maps)
}

/// Synthesizes the target-domain image of `x_test`: infer source maps,
/// transport voxelwise through the channel mapping, reconstruct with the
/// target bank, clamp to [0, 1].
pub fn synthesize(model: &DoteModel, x_test: &Tensor, cfg: &SolverConfig) -> Result<Tensor> {
    Ok(clamp01(&synthesize_raw(model, x_test, cfg)?))
}

/// Keys cubic convolution kernel, a = -1/2.
fn keys_kernel(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        (1.5 * x - 2.5) * x * x + 1.0
    } else if x < 2.0 {
        ((-0.5 * x + 2.5) * x - 4.0) * x + 2.0
    } else {
        0.0
    }
}

/// Separable bicubic resampling of one axis. `filter_scale` > 1 widens
/// the kernel for anti-aliased downsampling; weights are renormalized so
/// constants are preserved exactly.
fn resample_axis(t: &Tensor, axis: usize, out_extent: usize, filter_scale: f64) -> Result<Tensor> {
    let dims = t.dims();
    let in_extent = dims[axis];
    let mut out_dims = dims.to_vec();
    out_dims[axis] = out_extent;
    let mut out = Tensor::zeros(&out_dims)?;

    let scale = in_extent as f64 / out_extent as f64;
    let radius = 2.0 * filter_scale;
    // Tap positions and weights per output coordinate (half-pixel
    // centers), shared by every line along the axis.
    let mut taps: Vec<(Vec<usize>, Vec<f64>)> = Vec::with_capacity(out_extent);
    for o in 0..out_extent {
        let src = (o as f64 + 0.5) * scale - 0.5;
        let lo = (src - radius).ceil() as isize;
        let hi = (src + radius).floor() as isize;
        let mut idx = Vec::new();
        let mut wgt = Vec::new();
        let mut total = 0.0;
        for tpos in lo..=hi {
            let w = keys_kernel((src - tpos as f64) / filter_scale) / filter_scale;
            if w == 0.0 {
                continue;
            }
            let clamped = tpos.clamp(0, in_extent as isize - 1) as usize;
            idx.push(clamped);
            wgt.push(w);
            total += w;
        }
        for w in wgt.iter_mut() {
            *w /= total;
        }
        taps.push((idx, wgt));
    }

    let post: usize = dims[axis + 1..].iter().product();
    let pre: usize = dims[..axis].iter().product();
    let out_data = out.data_mut();
    for p in 0..pre {
        for q in 0..post {
            for (o, (idx, wgt)) in taps.iter().enumerate() {
                let mut acc = 0.0;
                for (&i, &w) in idx.iter().zip(wgt) {
                    acc += w * t.data()[(p * in_extent + i) * post + q];
                }
                out_data[(p * out_extent + o) * post + q] = acc;
            }
        }
    }
    Ok(out)
}

/// Anti-aliased bicubic downsampling by an integer factor along every
/// axis. Every extent must divide evenly.
///
/// ```
/// use dote::synthesis::{sr_degrade, sr_upsample};
/// use dote::grid::Tensor;
///
/// let flat = Tensor::new(vec![16, 16], vec![0.25; 256])?;
/// let low = sr_degrade(&flat, 2)?;
/// assert_eq!(low.dims(), &[8, 8]);
/// // Flat images survive the round trip exactly (up to rounding).
/// let back = sr_upsample(&low, 2)?;
/// assert_eq!(back.dims(), &[16, 16]);
/// assert!(back.data().iter().all(|v| (v - 0.25).abs() < 1e-9));
/// # Ok::<(), dote::DoteError>(())
/// ```
pub fn sr_degrade(hr: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return Err(DoteError::invalid("factor must be positive"));
    }
    if factor == 1 {
        return Ok(hr.clone());
    }
    if hr.dims().iter().any(|&e| e % factor != 0) {
        return Err(DoteError::dims(format!(
            "extents {:?} are not divisible by factor {}",
            hr.dims(),
            factor
        )));
    }
    let mut cur = hr.clone();
    for axis in 0..hr.rank() {
        let out_extent = hr.dims()[axis] / factor;
        cur = resample_axis(&cur, axis, out_extent, factor as f64)?;
    }
    Ok(cur)
}

/// Bicubic upsampling by an integer factor along every axis, used to
/// register low-resolution images onto the high-resolution grid.
pub fn sr_upsample(lr: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return Err(DoteError::invalid("factor must be positive"));
    }
    if factor == 1 {
        return Ok(lr.clone());
    }
    let mut cur = lr.clone();
    for axis in 0..lr.rank() {
        let out_extent = lr.dims()[axis] * factor;
        cur = resample_axis(&cur, axis, out_extent, 1.0)?;
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::for_each_index;

    #[test]
    fn constant_survives_degrade_and_upsample() {
        let t = Tensor::new(vec![16, 16], vec![0.37; 256]).unwrap();
        let lr = sr_degrade(&t, 2).unwrap();
        assert_eq!(lr.dims(), &[8, 8]);
        for &v in lr.data() {
            assert!((v - 0.37).abs() < 1e-9, "{v}");
        }
        let hr = sr_upsample(&lr, 2).unwrap();
        assert_eq!(hr.dims(), &[16, 16]);
        for &v in hr.data() {
            assert!((v - 0.37).abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn factor_one_is_identity() {
        let t = Tensor::new(vec![4, 4], (0..16).map(|v| v as f64 / 15.0).collect()).unwrap();
        assert_eq!(sr_degrade(&t, 1).unwrap(), t);
        assert_eq!(sr_upsample(&t, 1).unwrap(), t);
    }

    #[test]
    fn non_divisible_extent_rejected() {
        let t = Tensor::zeros(&[9, 8]).unwrap();
        assert!(matches!(sr_degrade(&t, 2), Err(DoteError::Dimension(_))));
    }

    #[test]
    fn ramp_downsample_matches_direct_kernel_evaluation() {
        // Direct per-sample evaluation of the scaled Keys kernel,
        // including edge clamping and weight normalization, written
        // independently of the separable pass.
        let mut hr = Tensor::zeros(&[16, 16]).unwrap();
        for_each_index(&[16, 16], |idx| {
            let v = (idx[0] as f64 + 2.0 * idx[1] as f64) / 48.0;
            hr.set(idx, v);
        });
        let factor = 2usize;
        let lr = sr_degrade(&hr, factor).unwrap();

        let fs = factor as f64;
        for oy in 0..8usize {
            for ox in 0..8usize {
                let sy = (oy as f64 + 0.5) * fs - 0.5;
                let sx = (ox as f64 + 0.5) * fs - 0.5;
                let mut acc = 0.0;
                let mut total = 0.0;
                for ty in (sy - 2.0 * fs).ceil() as isize..=(sy + 2.0 * fs).floor() as isize {
                    for tx in (sx - 2.0 * fs).ceil() as isize..=(sx + 2.0 * fs).floor() as isize {
                        let w = keys_kernel((sy - ty as f64) / fs) / fs
                            * (keys_kernel((sx - tx as f64) / fs) / fs);
                        if w == 0.0 {
                            continue;
                        }
                        let cy = ty.clamp(0, 15) as usize;
                        let cx = tx.clamp(0, 15) as usize;
                        acc += w * hr.get(&[cy, cx]);
                        total += w;
                    }
                }
                let expected = acc / total;
                let got = lr.get(&[oy, ox]);
                assert!(
                    (expected - got).abs() < 1e-8,
                    "({oy},{ox}): {expected} vs {got}"
                );
            }
        }
    }

    #[test]
    fn down_then_up_preserves_smooth_content() {
        // Single low-frequency cosine: the round trip should stay close.
        let mut t = Tensor::zeros(&[32, 32]).unwrap();
        for_each_index(&[32, 32], |idx| {
            let v = 0.5
                + 0.4
                    * (2.0 * std::f64::consts::PI * idx[0] as f64 / 16.0).cos()
                    * (2.0 * std::f64::consts::PI * idx[1] as f64 / 16.0).cos();
            t.set(idx, v);
        });
        let roundtrip = sr_upsample(&sr_degrade(&t, 2).unwrap(), 2).unwrap();
        let mse: f64 = t
            .data()
            .iter()
            .zip(roundtrip.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / t.len() as f64;
        let psnr = 10.0 * (1.0 / mse).log10();
        assert!(psnr >= 30.0, "psnr {psnr}");
    }

    #[test]
    fn shape_contract_roundtrip() {
        for dims in [vec![16usize, 24], vec![8, 8, 12]] {
            let t = Tensor::zeros(&dims).unwrap();
            for f in [1usize, 2, 4] {
                let rt = sr_upsample(&sr_degrade(&t, f).unwrap(), f).unwrap();
                assert_eq!(rt.dims(), dims.as_slice());
            }
        }
    }

    #[test]
    fn dataset_rejects_mismatched_pair() {
        let a = Tensor::zeros(&[4, 4]).unwrap();
        let b = Tensor::zeros(&[4, 6]).unwrap();
        let pair = ImagePair {
            id: "p0".into(),
            source: a,
            target: b,
        };
        assert!(PairedDataset::new(vec![pair], "m1", "m2").is_err());
    }

    #[test]
    fn dataset_rejects_unnormalized_values() {
        let mut a = Tensor::zeros(&[4, 4]).unwrap();
        a.data_mut()[3] = 1.5;
        let pair = ImagePair {
            id: "p0".into(),
            source: a,
            target: Tensor::zeros(&[4, 4]).unwrap(),
        };
        assert!(PairedDataset::new(vec![pair], "m1", "m2").is_err());
    }
}
