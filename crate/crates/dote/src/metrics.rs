//! Reference image quality metrics: PSNR and SSIM.

use crate::error::{DoteError, Result};
use crate::grid::Tensor;

/// SSIM parameters: Gaussian window extent and stddev, the two stability
/// constants, and the dynamic range of the data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub window_sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub peak: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            window_sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            peak: 1.0,
        }
    }
}

impl SsimParams {
    fn validate(&self) -> Result<()> {
        if self.window.is_multiple_of(2) || self.window == 0 {
            return Err(DoteError::invalid("SSIM window extent must be odd"));
        }
        if !(self.k1 > 0.0 && self.k2 > 0.0 && self.peak > 0.0 && self.window_sigma > 0.0) {
            return Err(DoteError::invalid(
                "SSIM constants, peak and window sigma must be positive",
            ));
        }
        Ok(())
    }
}

fn check_same_dims(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(DoteError::dims(format!(
            "metric operands have different dims: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Mean squared error.
pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_same_dims(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.len() as f64)
}

/// Peak signal-to-noise ratio in dB: `10 log10(peak^2 / MSE)`. Identical
/// inputs give `+inf`.
///
/// ```
/// use dote::grid::Tensor;
/// use dote::metrics::{psnr, ssim, SsimParams};
///
/// let a = Tensor::new(vec![16, 16], vec![0.5; 256])?;
/// let mut b = a.clone();
/// b.data_mut()[0] = 0.6;
///
/// assert_eq!(psnr(&a, &a, 1.0)?, f64::INFINITY);
/// assert!(psnr(&a, &b, 1.0)? > 40.0);
/// assert_eq!(ssim(&a, &a, &SsimParams::default())?, 1.0);
/// # Ok::<(), dote::DoteError>(())
/// ```
pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    if peak <= 0.0 || peak.is_nan() {
        return Err(DoteError::invalid("peak must be positive"));
    }
    let err = mse(a, b)?;
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / err).log10())
}

fn gaussian_window(extent: usize, sigma: f64) -> Vec<f64> {
    let half = (extent / 2) as f64;
    let mut w: Vec<f64> = (0..extent)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = w.iter().sum();
    for v in w.iter_mut() {
        *v /= total;
    }
    w
}

/// SSIM over one 2-D plane: mean of the local index over all positions
/// where the window fits entirely.
fn ssim_plane(a: &[f64], b: &[f64], rows: usize, cols: usize, p: &SsimParams) -> Result<f64> {
    let w = p.window;
    if rows < w || cols < w {
        return Err(DoteError::dims(format!(
            "image {}x{} is smaller than the {}x{} SSIM window",
            rows, cols, w, w
        )));
    }
    let win = gaussian_window(w, p.window_sigma);
    let c1 = (p.k1 * p.peak) * (p.k1 * p.peak);
    let c2 = (p.k2 * p.peak) * (p.k2 * p.peak);

    let mut total = 0.0;
    let mut count = 0usize;
    for r0 in 0..=(rows - w) {
        for c0 in 0..=(cols - w) {
            let mut mu_a = 0.0;
            let mut mu_b = 0.0;
            let mut aa = 0.0;
            let mut bb = 0.0;
            let mut ab = 0.0;
            for (dr, wr) in win.iter().enumerate() {
                for (dc, wc) in win.iter().enumerate() {
                    let weight = wr * wc;
                    let va = a[(r0 + dr) * cols + (c0 + dc)];
                    let vb = b[(r0 + dr) * cols + (c0 + dc)];
                    mu_a += weight * va;
                    mu_b += weight * vb;
                    aa += weight * va * va;
                    bb += weight * vb * vb;
                    ab += weight * va * vb;
                }
            }
            let var_a = aa - mu_a * mu_a;
            let var_b = bb - mu_b * mu_b;
            let cov = ab - mu_a * mu_b;
            let local = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            total += local;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Structural similarity index with Gaussian weighting, in [-1, 1].
///
/// 2-D tensors are compared directly; 3-D tensors are compared slice by
/// slice along the last axis and the per-slice scores averaged.
pub fn ssim(a: &Tensor, b: &Tensor, p: &SsimParams) -> Result<f64> {
    check_same_dims(a, b)?;
    p.validate()?;
    match a.dims() {
        [rows, cols] => ssim_plane(a.data(), b.data(), *rows, *cols, p),
        [rows, cols, slices] => {
            // Slices run along the last (contiguous) axis; gather each
            // plane before scoring it.
            let (rows, cols, slices) = (*rows, *cols, *slices);
            let mut total = 0.0;
            let mut pa = vec![0.0; rows * cols];
            let mut pb = vec![0.0; rows * cols];
            for s in 0..slices {
                for r in 0..rows {
                    for c in 0..cols {
                        pa[r * cols + c] = a.data()[(r * cols + c) * slices + s];
                        pb[r * cols + c] = b.data()[(r * cols + c) * slices + s];
                    }
                }
                total += ssim_plane(&pa, &pb, rows, cols, p)?;
            }
            Ok(total / slices as f64)
        }
        other => Err(DoteError::dims(format!("unsupported rank {}", other.len()))),
    }
}
