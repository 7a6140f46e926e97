//! Dense real and complex tensors plus the discrete Fourier machinery the
//! solvers run on.
//!
//! Everything downstream (sparse coding, filter learning, synthesis) works
//! on whole images under periodic boundary conditions, so the only
//! convolution in the crate is the circular one, implemented as a
//! pointwise product in the frequency domain. Transforms are unnormalized
//! going forward and carry the full `1/N` on the way back, which keeps a
//! single normalization point and makes the Parseval bookkeeping explicit:
//! `sum |fft(t)|^2 == N * sum t^2`.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::error::{DoteError, Result};

/// Relative imaginary mass above which an inverse transform refuses to
/// call its output real.
const IMAG_RESIDUE_TOL: f64 = 1e-9;

/// Dense real tensor over a 2-D or 3-D grid, row-major (last axis
/// contiguous). Values are dimensionless intensities and always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

/// Frequency-domain counterpart of [`Tensor`]: same grid, complex
/// coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralTensor {
    dims: Vec<usize>,
    data: Vec<Complex64>,
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 || dims.len() > 3 {
        return Err(DoteError::dims(format!(
            "rank must be 2 or 3, got {}",
            dims.len()
        )));
    }
    if dims.contains(&0) {
        return Err(DoteError::dims(format!("zero extent in dims {:?}", dims)));
    }
    Ok(())
}

impl Tensor {
    /// Builds a tensor, validating rank, extents, element count and
    /// finiteness.
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_dims(&dims)?;
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(DoteError::dims(format!(
                "dims {:?} imply {} elements, got {}",
                dims,
                n,
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(DoteError::invalid("tensor contains non-finite values"));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        check_dims(dims)?;
        let n = dims.iter().product();
        Ok(Tensor {
            dims: dims.to_vec(),
            data: vec![0.0; n],
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the raw values. The finiteness invariant is the
    /// caller's to keep; operations re-validate where it matters.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Flat offset of a multi-index.
    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        let mut off = 0;
        for (i, (&x, &d)) in idx.iter().zip(&self.dims).enumerate() {
            debug_assert!(
                x < d,
                "index {:?} out of bounds {:?} at axis {}",
                idx,
                self.dims,
                i
            );
            off = off * d + x;
        }
        off
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let off = self.offset(idx);
        self.data[off] = v;
    }

    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    pub fn squared_l2(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.squared_l2().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Largest elementwise absolute difference; errors on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        if self.dims != other.dims {
            return Err(DoteError::dims(format!(
                "shape mismatch {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
    }

    /// self + scale * other, shapes must match.
    pub fn axpy(&self, scale: f64, other: &Tensor) -> Result<Tensor> {
        if self.dims != other.dims {
            return Err(DoteError::dims(format!(
                "shape mismatch {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + scale * b)
            .collect();
        Ok(Tensor {
            dims: self.dims.clone(),
            data,
        })
    }

    pub fn scaled(&self, s: f64) -> Tensor {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }
}

impl SpectralTensor {
    pub fn new(dims: Vec<usize>, data: Vec<Complex64>) -> Result<Self> {
        check_dims(&dims)?;
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(DoteError::dims(format!(
                "dims {:?} imply {} elements, got {}",
                dims,
                n,
                data.len()
            )));
        }
        if !data.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
            return Err(DoteError::invalid(
                "spectral tensor contains non-finite values",
            ));
        }
        Ok(SpectralTensor { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    /// Componentwise product, the frequency-domain face of circular
    /// convolution.
    pub fn hadamard(&self, other: &SpectralTensor) -> Result<SpectralTensor> {
        if self.dims != other.dims {
            return Err(DoteError::dims(format!(
                "shape mismatch {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .collect();
        Ok(SpectralTensor {
            dims: self.dims.clone(),
            data,
        })
    }

    pub fn squared_l2(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, direction: FftDirection) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft(n, direction))
}

/// In-place n-dimensional transform: one 1-D pass per axis.
fn fft_nd(data: &mut [Complex64], dims: &[usize], direction: FftDirection) {
    for axis in 0..dims.len() {
        let n = dims[axis];
        if n == 1 {
            continue;
        }
        let post: usize = dims[axis + 1..].iter().product();
        let pre: usize = dims[..axis].iter().product();
        let fft = plan(n, direction);
        let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        if post == 1 {
            for p in 0..pre {
                let base = p * n;
                fft.process_with_scratch(&mut data[base..base + n], &mut scratch);
            }
        } else {
            let mut line = vec![Complex64::new(0.0, 0.0); n];
            for p in 0..pre {
                for q in 0..post {
                    let base = p * n * post + q;
                    for t in 0..n {
                        line[t] = data[base + t * post];
                    }
                    fft.process_with_scratch(&mut line, &mut scratch);
                    for t in 0..n {
                        data[base + t * post] = line[t];
                    }
                }
            }
        }
    }
}

/// Unnormalized forward DFT of a real tensor.
pub fn fft_forward(t: &Tensor) -> Result<SpectralTensor> {
    if !t.data.iter().all(|v| v.is_finite()) {
        return Err(DoteError::invalid("fft_forward: non-finite input"));
    }
    let mut data: Vec<Complex64> = t.data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_nd(&mut data, &t.dims, FftDirection::Forward);
    Ok(SpectralTensor {
        dims: t.dims.clone(),
        data,
    })
}

/// Normalized (1/N) inverse DFT, returning the real part.
///
/// The input is expected to be the spectrum of a real tensor; an
/// imaginary residue above `1e-9` relative mass means the caller fed in
/// something inconsistent and is reported as an error rather than
/// silently discarded.
pub fn fft_inverse(s: &SpectralTensor) -> Result<Tensor> {
    if !s.data.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
        return Err(DoteError::invalid("fft_inverse: non-finite input"));
    }
    let mut data = s.data.clone();
    fft_nd(&mut data, &s.dims, FftDirection::Inverse);
    let scale = 1.0 / s.len() as f64;
    let mut total = 0.0f64;
    let mut imag = 0.0f64;
    for v in data.iter_mut() {
        *v *= scale;
        total += v.norm_sqr();
        imag += v.im * v.im;
    }
    let rel = (imag / total.max(1e-300)).sqrt();
    if total > 0.0 && rel > IMAG_RESIDUE_TOL {
        return Err(DoteError::NumericalConsistency(format!(
            "inverse transform of a claimed-real spectrum has relative imaginary residue {:.3e}",
            rel
        )));
    }
    Ok(Tensor {
        dims: s.dims.clone(),
        data: data.into_iter().map(|v| v.re).collect(),
    })
}

/// Inverse transform for solver internals whose spectra are Hermitian by
/// construction (real inputs, conjugation-symmetric algebra). Discards
/// the floating-point imaginary residue instead of gating on it, which
/// matters for iterates that are themselves near-cancellation small.
pub(crate) fn fft_inverse_real_part(s: &SpectralTensor) -> Tensor {
    let mut data = s.data.clone();
    fft_nd(&mut data, &s.dims, FftDirection::Inverse);
    let scale = 1.0 / s.len() as f64;
    Tensor {
        dims: s.dims.clone(),
        data: data.into_iter().map(|v| v.re * scale).collect(),
    }
}

fn check_kernel_fits(kernel_dims: &[usize], target_dims: &[usize]) -> Result<()> {
    if kernel_dims.len() != target_dims.len() {
        return Err(DoteError::dims(format!(
            "kernel rank {} does not match target rank {}",
            kernel_dims.len(),
            target_dims.len()
        )));
    }
    if kernel_dims.iter().zip(target_dims).any(|(k, t)| k > t) {
        return Err(DoteError::dims(format!(
            "kernel dims {:?} exceed target dims {:?}",
            kernel_dims, target_dims
        )));
    }
    Ok(())
}

/// Visits every multi-index of `dims` in row-major order.
pub fn for_each_index(dims: &[usize], mut f: impl FnMut(&[usize])) {
    let rank = dims.len();
    let mut idx = vec![0usize; rank];
    loop {
        f(&idx);
        let mut axis = rank;
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] < dims[axis] {
                break;
            }
            idx[axis] = 0;
        }
    }
}

/// Places `kernel` at the origin corner of a zero tensor of
/// `target_dims`. Inverse of [`crop_kernel`].
pub fn embed_kernel(kernel: &Tensor, target_dims: &[usize]) -> Result<Tensor> {
    check_dims(target_dims)?;
    check_kernel_fits(&kernel.dims, target_dims)?;
    let mut out = Tensor::zeros(target_dims)?;
    for_each_index(&kernel.dims, |idx| {
        let v = kernel.get(idx);
        out.set(idx, v);
    });
    Ok(out)
}

/// Extracts the `kernel_dims` corner at the origin of `t`.
pub fn crop_kernel(t: &Tensor, kernel_dims: &[usize]) -> Result<Tensor> {
    check_dims(kernel_dims)?;
    check_kernel_fits(kernel_dims, &t.dims)?;
    let mut out = Tensor::zeros(kernel_dims)?;
    for_each_index(kernel_dims, |idx| {
        let v = t.get(idx);
        out.set(idx, v);
    });
    Ok(out)
}

/// Circular (periodic-boundary) convolution of `t` with a kernel no
/// larger than `t`, via the spectral product.
pub fn circular_convolve(t: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    check_kernel_fits(&kernel.dims, &t.dims)?;
    let spec_t = fft_forward(t)?;
    let spec_k = fft_forward(&embed_kernel(kernel, &t.dims)?)?;
    fft_inverse(&spec_t.hadamard(&spec_k)?)
}

/// Circular correlation of `t` with `kernel` (convolution with the
/// kernel conjugate-reversed), used for gradient and threshold bounds.
pub fn circular_correlate(t: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    check_kernel_fits(&kernel.dims, &t.dims)?;
    let spec_t = fft_forward(t)?;
    let mut spec_k = fft_forward(&embed_kernel(kernel, &t.dims)?)?;
    for v in spec_k.data_mut() {
        *v = v.conj();
    }
    fft_inverse(&spec_t.hadamard(&spec_k)?)
}
