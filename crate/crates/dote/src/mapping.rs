//! The K x K channel mapping that transports feature maps between the
//! two domains, and its closed-form ridge update.

use nalgebra::DMatrix;
use once_cell::sync::OnceCell;

use crate::csc::FeatureMapStack;
use crate::error::{DoteError, Result};
use crate::grid::Tensor;

/// Linear mapping between the two domains' feature-map channel spaces.
///
/// The matrix acts across the channel index at each voxel: transporting a
/// stack multiplies every voxel's K-vector of channel values by `W`. The
/// inverse used for the feedback direction is the ridge-regularized
/// pseudo-inverse `(W^T W + eps I)^-1 W^T`, computed lazily and cached, so
/// a training run that never needs feedback never pays for (or depends
/// on) an inversion.
#[derive(Debug)]
pub struct ChannelMap {
    matrix: DMatrix<f64>,
    ridge_eps: f64,
    inverse: OnceCell<DMatrix<f64>>,
}

impl Clone for ChannelMap {
    fn clone(&self) -> Self {
        // The cached inverse is derived state; a clone recomputes on demand.
        ChannelMap {
            matrix: self.matrix.clone(),
            ridge_eps: self.ridge_eps,
            inverse: OnceCell::new(),
        }
    }
}

impl PartialEq for ChannelMap {
    fn eq(&self, other: &Self) -> bool {
        self.matrix == other.matrix && self.ridge_eps == other.ridge_eps
    }
}

fn default_ridge_eps(matrix: &DMatrix<f64>) -> f64 {
    let k = matrix.nrows() as f64;
    let trace_gram: f64 = matrix.iter().map(|v| v * v).sum();
    let eps = 1e-8 * trace_gram / k;
    if eps > 0.0 {
        eps
    } else {
        1e-12
    }
}

impl ChannelMap {
    /// Wraps a square matrix with the default inversion ridge
    /// `1e-8 * trace(W^T W) / K`.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let eps = default_ridge_eps(&matrix);
        ChannelMap::with_ridge(matrix, eps)
    }

    pub fn with_ridge(matrix: DMatrix<f64>, ridge_eps: f64) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return Err(DoteError::dims(format!(
                "channel map must be square and non-empty, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if !matrix.iter().all(|v| v.is_finite()) {
            return Err(DoteError::invalid("channel map has non-finite entries"));
        }
        if !(ridge_eps > 0.0 && ridge_eps.is_finite()) {
            return Err(DoteError::invalid("ridge_eps must be positive and finite"));
        }
        Ok(ChannelMap {
            matrix,
            ridge_eps,
            inverse: OnceCell::new(),
        })
    }

    pub fn identity(k: usize) -> Result<Self> {
        ChannelMap::with_ridge(DMatrix::identity(k, k), 1e-8)
    }

    pub fn channels(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn ridge_eps(&self) -> f64 {
        self.ridge_eps
    }

    /// The regularized inverse `(W^T W + eps I)^-1 W^T`.
    pub fn inverse_matrix(&self) -> &DMatrix<f64> {
        self.inverse.get_or_init(|| {
            let k = self.matrix.nrows();
            let gram = self.matrix.transpose() * &self.matrix
                + DMatrix::<f64>::identity(k, k) * self.ridge_eps;
            let lu = gram.lu();
            lu.solve(&self.matrix.transpose())
                .expect("ridge-regularized Gram matrix is positive definite")
        })
    }

    /// Whether the lazy inverse has been materialized. Lets tests pin
    /// down that the feedback-free code path never inverts.
    pub fn inverse_computed(&self) -> bool {
        self.inverse.get().is_some()
    }

    /// Applies `W` across the channel index at every voxel.
    pub fn transport(&self, maps: &FeatureMapStack) -> Result<FeatureMapStack> {
        self.transport_with(maps, &self.matrix)
    }

    /// Applies the regularized inverse across the channel index.
    pub fn transport_back(&self, maps: &FeatureMapStack) -> Result<FeatureMapStack> {
        let inv = self.inverse_matrix().clone();
        self.transport_with(maps, &inv)
    }

    fn transport_with(&self, maps: &FeatureMapStack, m: &DMatrix<f64>) -> Result<FeatureMapStack> {
        let k = self.channels();
        if maps.count() != k {
            return Err(DoteError::dims(format!(
                "stack has {} channels, map expects {}",
                maps.count(),
                k
            )));
        }
        let dims = maps.dims().to_vec();
        let n = maps.map(0).len();
        let mut out: Vec<Vec<f64>> = vec![vec![0.0; n]; k];
        for (r, row_out) in out.iter_mut().enumerate() {
            for c in 0..k {
                let w = m[(r, c)];
                if w == 0.0 {
                    continue;
                }
                for (o, v) in row_out.iter_mut().zip(maps.map(c).data()) {
                    *o += w * v;
                }
            }
        }
        let tensors = out
            .into_iter()
            .map(|data| Tensor::new(dims.clone(), data))
            .collect::<Result<Vec<_>>>()?;
        FeatureMapStack::new(tensors)
    }
}

/// Closed-form ridge update of the channel mapping from stacked feature
/// maps: `W = Sy Sx^T (Sx Sx^T + (gamma/beta) I)^-1`, with the maps
/// flattened to `K x N` matrices over all voxels of all pairs.
///
/// The coupling weight must be active; with `beta == 0` there is no
/// mapping to fit and the call is rejected.
///
/// ```
/// use dote::csc::FeatureMapStack;
/// use dote::grid::Tensor;
/// use dote::mapping::update_mapping;
///
/// // Target maps equal to the source maps, no ridge: the fit is the identity.
/// let maps = FeatureMapStack::new(vec![
///     Tensor::new(vec![2, 4], vec![0.3, -1.2, 0.7, 0.0, 2.0, 0.4, -0.5, 1.1])?,
///     Tensor::new(vec![2, 4], vec![-0.8, 0.2, 1.5, -0.4, 0.6, -1.0, 0.9, 0.1])?,
/// ])?;
/// let w = update_mapping(&[&maps], &[&maps], 1.0, 0.0)?;
/// let identity = nalgebra::DMatrix::<f64>::identity(2, 2);
/// assert!((w.matrix() - identity).norm() < 1e-10);
/// # Ok::<(), dote::DoteError>(())
/// ```
pub fn update_mapping(
    sx: &[&FeatureMapStack],
    sy: &[&FeatureMapStack],
    beta: f64,
    gamma: f64,
) -> Result<ChannelMap> {
    if beta <= 0.0 {
        return Err(DoteError::InvalidCall(
            "update_mapping requires beta > 0; the mapping is undefined without coupling".into(),
        ));
    }
    if gamma < 0.0 {
        return Err(DoteError::invalid("gamma must be nonnegative"));
    }
    if sx.is_empty() || sx.len() != sy.len() {
        return Err(DoteError::invalid(
            "update_mapping needs matching, non-empty stack lists",
        ));
    }
    let k = sx[0].count();
    for (a, b) in sx.iter().zip(sy) {
        if a.count() != k || b.count() != k {
            return Err(DoteError::dims("inconsistent channel counts"));
        }
        if a.dims() != b.dims() {
            return Err(DoteError::dims("paired stacks must share dims"));
        }
    }

    // Accumulate the K x K Gramians Sx Sx^T and Sy Sx^T over all voxels.
    let mut sxx = DMatrix::<f64>::zeros(k, k);
    let mut syx = DMatrix::<f64>::zeros(k, k);
    for (a, b) in sx.iter().zip(sy) {
        let n = a.map(0).len();
        for r in 0..k {
            let ar = a.map(r).data();
            let br = b.map(r).data();
            for c in 0..k {
                let ac = a.map(c).data();
                let mut dot_xx = 0.0;
                let mut dot_yx = 0.0;
                for v in 0..n {
                    dot_xx += ar[v] * ac[v];
                    dot_yx += br[v] * ac[v];
                }
                sxx[(r, c)] += dot_xx;
                syx[(r, c)] += dot_yx;
            }
        }
    }

    let ridge = gamma / beta;
    let lhs = &sxx + DMatrix::<f64>::identity(k, k) * ridge;
    // W (Sxx + rI) = Syx  =>  (Sxx + rI) W^T = Syx^T  (Sxx is symmetric).
    let wt = lhs
        .lu()
        .solve(&syx.transpose())
        .ok_or_else(|| DoteError::NumericalConsistency("singular ridge system".into()))?;
    ChannelMap::new(wt.transpose())
}
