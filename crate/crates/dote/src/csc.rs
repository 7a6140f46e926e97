//! Convolutional sparse coding subproblem solvers.
//!
//! An image is approximated as the sum of `K` small filters circularly
//! convolved with `K` full-size sparse feature maps. Both directions of
//! the problem live here: inferring the maps for fixed filters (ADMM with
//! a soft-thresholded auxiliary copy of the maps) and learning the
//! filters for fixed maps (augmented Lagrangian with a support- and
//! norm-constrained auxiliary filter). The quadratic pieces of both
//! solvers diagonalize over frequencies, so each inner iteration is a set
//! of independent per-frequency linear solves between FFT passes.

use nalgebra::{DMatrix, DVector, Dyn};
use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::config::SolverConfig;
use crate::error::{DoteError, Result};
use crate::grid::{
    crop_kernel, embed_kernel, fft_forward, fft_inverse, fft_inverse_real_part, SpectralTensor,
    Tensor,
};
use crate::mapping::ChannelMap;

/// A bank of `K` filters with common small support `d` per axis and an
/// l2 norm at most 1 each.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    filters: Vec<Tensor>,
}

const UNIT_BALL_SLACK: f64 = 1e-9;

impl FilterBank {
    pub fn new(filters: Vec<Tensor>) -> Result<Self> {
        if filters.is_empty() {
            return Err(DoteError::invalid("filter bank needs at least one filter"));
        }
        let dims = filters[0].dims().to_vec();
        let d = dims[0];
        if d.is_multiple_of(2) {
            return Err(DoteError::invalid(format!(
                "filter support must be odd, got {}",
                d
            )));
        }
        if !dims.iter().all(|&e| e == d) {
            return Err(DoteError::dims(format!(
                "filters must be cubes of a single support, got {:?}",
                dims
            )));
        }
        for (k, f) in filters.iter().enumerate() {
            if f.dims() != dims.as_slice() {
                return Err(DoteError::dims(format!(
                    "filter {} has dims {:?}, expected {:?}",
                    k,
                    f.dims(),
                    dims
                )));
            }
            let norm = f.l2_norm();
            if norm > 1.0 + UNIT_BALL_SLACK {
                return Err(DoteError::invalid(format!(
                    "filter {} violates the unit ball: l2 norm {}",
                    k, norm
                )));
            }
        }
        Ok(FilterBank { filters })
    }

    /// Fixed-seed standard-normal draw, each filter projected onto the
    /// unit ball.
    pub fn random_init(k: usize, d: usize, rank: usize, seed: u64) -> Result<Self> {
        if !(2..=3).contains(&rank) {
            return Err(DoteError::dims(format!("rank must be 2 or 3, got {rank}")));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let dims = vec![d; rank];
        let n: usize = dims.iter().product();
        let filters = (0..k)
            .map(|_| {
                let data: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                Ok(project_unit_ball(&Tensor::new(dims.clone(), data)?))
            })
            .collect::<Result<Vec<_>>>()?;
        FilterBank::new(filters)
    }

    pub fn count(&self) -> usize {
        self.filters.len()
    }

    pub fn support(&self) -> usize {
        self.filters[0].dims()[0]
    }

    pub fn rank(&self) -> usize {
        self.filters[0].rank()
    }

    pub fn filters(&self) -> &[Tensor] {
        &self.filters
    }

    pub fn filter(&self, k: usize) -> &Tensor {
        &self.filters[k]
    }

    /// Filters must fit inside (and share rank with) the target grid.
    pub fn check_compatible(&self, dims: &[usize]) -> Result<()> {
        if dims.len() != self.rank() {
            return Err(DoteError::dims(format!(
                "bank rank {} does not match image rank {}",
                self.rank(),
                dims.len()
            )));
        }
        if dims.iter().any(|&e| e < self.support()) {
            return Err(DoteError::dims(format!(
                "filter support {} exceeds image dims {:?}",
                self.support(),
                dims
            )));
        }
        Ok(())
    }
}

/// `K` feature maps on a common grid, one per filter.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMapStack {
    maps: Vec<Tensor>,
}

impl FeatureMapStack {
    pub fn new(maps: Vec<Tensor>) -> Result<Self> {
        if maps.is_empty() {
            return Err(DoteError::invalid("feature map stack needs K >= 1"));
        }
        let dims = maps[0].dims().to_vec();
        for (k, m) in maps.iter().enumerate() {
            if m.dims() != dims.as_slice() {
                return Err(DoteError::dims(format!(
                    "map {} has dims {:?}, expected {:?}",
                    k,
                    m.dims(),
                    dims
                )));
            }
        }
        Ok(FeatureMapStack { maps })
    }

    pub fn zeros(k: usize, dims: &[usize]) -> Result<Self> {
        let maps = (0..k)
            .map(|_| Tensor::zeros(dims))
            .collect::<Result<Vec<_>>>()?;
        FeatureMapStack::new(maps)
    }

    pub fn count(&self) -> usize {
        self.maps.len()
    }

    pub fn dims(&self) -> &[usize] {
        self.maps[0].dims()
    }

    pub fn maps(&self) -> &[Tensor] {
        &self.maps
    }

    pub fn map(&self, k: usize) -> &Tensor {
        &self.maps[k]
    }

    pub fn map_mut(&mut self, k: usize) -> &mut Tensor {
        &mut self.maps[k]
    }

    pub fn l1_norm(&self) -> f64 {
        self.maps.iter().map(Tensor::l1_norm).sum()
    }

    pub fn squared_frobenius(&self) -> f64 {
        self.maps.iter().map(Tensor::squared_l2).sum()
    }

    fn frobenius_distance(&self, other: &FeatureMapStack) -> f64 {
        self.maps
            .iter()
            .zip(&other.maps)
            .map(|(a, b)| {
                a.data()
                    .iter()
                    .zip(b.data())
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Splitting state of the map-inference ADMM: the least-squares iterate,
/// its soft-thresholded auxiliary copy, the scaled dual, and the last
/// residuals.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub primary: FeatureMapStack,
    pub auxiliary: FeatureMapStack,
    pub scaled_duals: FeatureMapStack,
    pub penalty: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

/// One recorded solver iteration.
#[derive(Debug, Clone, Copy)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

/// Objective and residual history of a solve.
#[derive(Debug, Clone, Default)]
pub struct ConvergenceTrace {
    pub rows: Vec<TraceRow>,
    pub converged: bool,
}

impl ConvergenceTrace {
    pub fn final_objective(&self) -> Option<f64> {
        self.rows.last().map(|r| r.objective)
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iteration,objective,primal_residual,dual_residual")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{}",
                r.iteration, r.objective, r.primal_residual, r.dual_residual
            )?;
        }
        Ok(())
    }
}

/// Result of a feature-map solve: the maps to hand back (final auxiliary
/// iterate when converged, otherwise the best recorded one), plus the
/// full splitting state and the trace.
#[derive(Debug, Clone)]
pub struct MapSolve {
    pub maps: FeatureMapStack,
    pub state: AdmmState,
    pub trace: ConvergenceTrace,
}

/// Shrinkage operator: `sign(v) * max(|v| - t, 0)`. Exactly zero at
/// `|v| == t`.
///
/// ```
/// use dote::csc::soft_threshold;
///
/// assert_eq!(soft_threshold(5.0, 2.0)?, 3.0);
/// assert_eq!(soft_threshold(-1.0, 2.0)?, 0.0);
/// assert_eq!(soft_threshold(0.7, 0.0)?, 0.7);
/// # Ok::<(), dote::DoteError>(())
/// ```
pub fn soft_threshold(v: f64, t: f64) -> Result<f64> {
    if t < 0.0 || !t.is_finite() {
        return Err(DoteError::invalid(format!(
            "soft threshold must be nonnegative, got {t}"
        )));
    }
    let mag = v.abs() - t;
    Ok(if mag > 0.0 { v.signum() * mag } else { 0.0 })
}

/// Elementwise shrinkage over a tensor.
pub fn soft_threshold_tensor(t: &Tensor, thr: f64) -> Result<Tensor> {
    if thr < 0.0 || !thr.is_finite() {
        return Err(DoteError::invalid(format!(
            "soft threshold must be nonnegative, got {thr}"
        )));
    }
    let data = t
        .data()
        .iter()
        .map(|&v| {
            let mag = v.abs() - thr;
            if mag > 0.0 {
                v.signum() * mag
            } else {
                0.0
            }
        })
        .collect();
    Tensor::new(t.dims().to_vec(), data)
}

/// Radial projection onto the l2 unit ball; interior points pass through
/// untouched.
pub fn project_unit_ball(f: &Tensor) -> Tensor {
    let norm = f.l2_norm();
    if norm <= 1.0 {
        f.clone()
    } else {
        f.scaled(1.0 / norm)
    }
}

/// Sum of all filters convolved with their maps.
pub fn reconstruct(bank: &FilterBank, maps: &FeatureMapStack) -> Result<Tensor> {
    if bank.count() != maps.count() {
        return Err(DoteError::dims(format!(
            "bank has {} filters, stack has {} maps",
            bank.count(),
            maps.count()
        )));
    }
    bank.check_compatible(maps.dims())?;
    let dims = maps.dims().to_vec();
    let n: usize = dims.iter().product();
    let mut acc = vec![Complex64::new(0.0, 0.0); n];
    for k in 0..bank.count() {
        let fsp = fft_forward(&embed_kernel(bank.filter(k), &dims)?)?;
        let ssp = fft_forward(maps.map(k))?;
        for ((a, f), s) in acc.iter_mut().zip(fsp.data()).zip(ssp.data()) {
            *a += f * s;
        }
    }
    fft_inverse(&SpectralTensor::new(dims, acc)?)
}

/// Value of the sparse-coding objective
/// `0.5 ||x - sum_k F_k * S_k||^2 + lambda * sum_k ||S_k||_1`
/// under circular convolution.
pub fn csc_objective(
    x: &Tensor,
    bank: &FilterBank,
    maps: &FeatureMapStack,
    lambda: f64,
) -> Result<f64> {
    if x.dims() != maps.dims() {
        return Err(DoteError::dims(format!(
            "image dims {:?} do not match map dims {:?}",
            x.dims(),
            maps.dims()
        )));
    }
    let recon = reconstruct(bank, maps)?;
    let mut data = 0.0;
    for (a, b) in x.data().iter().zip(recon.data()) {
        let r = a - b;
        data += r * r;
    }
    Ok(0.5 * data + lambda * maps.l1_norm())
}

/// Which side of the coupled problem a dual map update solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingDirection {
    /// Solve the source-side maps: the variable sits under the forward
    /// mapping, `beta * || S_other - W S ||^2`.
    Primal,
    /// Solve the target-side maps: the variable sits under the inverse
    /// mapping, `beta * || S_other - W^-1 S ||^2`.
    Dual,
}

/// Algebraic form of the quadratic coupling added to a map solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingForm {
    /// `beta * || other - W s ||^2`
    UnderMap,
    /// `beta * || other - W^-1 s ||^2`
    UnderInverse,
    /// `beta * || s - W other ||^2`: the variable tracks the transported
    /// other-side maps. Used by feedback-free training for the target
    /// side, where no inverse may be evaluated.
    TowardTransported,
}

/// A coupling attached to a feature-map solve.
#[derive(Debug, Clone, Copy)]
pub struct Coupling<'a> {
    pub form: CouplingForm,
    pub map: &'a ChannelMap,
    pub other: &'a FeatureMapStack,
    pub beta: f64,
}

/// Channel-major spectra of a stack or bank.
struct SpectralStack {
    channels: Vec<Vec<Complex64>>,
}

impl SpectralStack {
    fn from_stack(maps: &FeatureMapStack) -> Result<Self> {
        let channels = maps
            .maps()
            .iter()
            .map(|m| fft_forward(m).map(|s| s.data().to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Ok(SpectralStack { channels })
    }

    fn from_bank(bank: &FilterBank, dims: &[usize]) -> Result<Self> {
        let channels = bank
            .filters()
            .iter()
            .map(|f| fft_forward(&embed_kernel(f, dims)?).map(|s| s.data().to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Ok(SpectralStack { channels })
    }
}

/// Precomputed quadratic coupling: the constant `2 beta G^T G` block for
/// the normal matrix, the per-frequency `2 beta G^T t` right-hand side,
/// and what is needed to evaluate `beta/N * || t - G u ||^2`.
struct CouplingData {
    gram: DMatrix<f64>,
    rhs: SpectralStack,
    g: DMatrix<f64>,
    target: SpectralStack,
    beta: f64,
}

impl CouplingData {
    fn build(c: &Coupling, dims: &[usize]) -> Result<CouplingData> {
        let k = c.map.channels();
        if c.other.count() != k {
            return Err(DoteError::dims(format!(
                "coupling stack has {} channels, map expects {}",
                c.other.count(),
                k
            )));
        }
        if c.other.dims() != dims {
            return Err(DoteError::dims(format!(
                "coupling stack dims {:?} do not match image dims {:?}",
                c.other.dims(),
                dims
            )));
        }
        if c.beta < 0.0 {
            return Err(DoteError::invalid("beta must be nonnegative"));
        }
        let other_spec = SpectralStack::from_stack(c.other)?;
        let (g, target) = match c.form {
            CouplingForm::UnderMap => (c.map.matrix().clone(), other_spec),
            CouplingForm::UnderInverse => (c.map.inverse_matrix().clone(), other_spec),
            CouplingForm::TowardTransported => {
                // Target is W * other; the transported spectra reuse the
                // forward matrix, and G collapses to the identity.
                let w = c.map.matrix();
                let n = other_spec.channels[0].len();
                let mut transported = vec![vec![Complex64::new(0.0, 0.0); n]; k];
                for (r, t_r) in transported.iter_mut().enumerate() {
                    for c_idx in 0..k {
                        let wv = w[(r, c_idx)];
                        if wv == 0.0 {
                            continue;
                        }
                        for (t, o) in t_r.iter_mut().zip(&other_spec.channels[c_idx]) {
                            *t += wv * o;
                        }
                    }
                }
                (
                    DMatrix::<f64>::identity(k, k),
                    SpectralStack {
                        channels: transported,
                    },
                )
            }
        };
        let gram = g.transpose() * &g * (2.0 * c.beta);
        let n = target.channels[0].len();
        let mut rhs = vec![vec![Complex64::new(0.0, 0.0); n]; k];
        for (r, rhs_r) in rhs.iter_mut().enumerate() {
            for c_idx in 0..k {
                // (G^T t)_r = sum_c G[c][r] t_c
                let gv = 2.0 * c.beta * g[(c_idx, r)];
                if gv == 0.0 {
                    continue;
                }
                for (acc, t) in rhs_r.iter_mut().zip(&target.channels[c_idx]) {
                    *acc += gv * t;
                }
            }
        }
        Ok(CouplingData {
            gram,
            rhs: SpectralStack { channels: rhs },
            g,
            target,
            beta: c.beta,
        })
    }

    /// `beta/N * sum_w || t(w) - G u(w) ||^2` == spatial coupling value.
    fn objective(&self, uspec: &SpectralStack, n: usize) -> f64 {
        let k = self.g.nrows();
        let mut acc = 0.0;
        for w in 0..uspec.channels[0].len() {
            for r in 0..k {
                let mut gu = Complex64::new(0.0, 0.0);
                for c in 0..k {
                    let gv = self.g[(r, c)];
                    if gv != 0.0 {
                        gu += gv * uspec.channels[c][w];
                    }
                }
                acc += (self.target.channels[r][w] - gu).norm_sqr();
            }
        }
        self.beta * acc / n as f64
    }
}

/// Advanced entry point of the map solver: optional coupling, optional
/// warm start, full state back. `infer_feature_maps` and
/// `update_feature_maps_dual` are thin wrappers.
#[allow(clippy::needless_range_loop)]
pub fn solve_feature_maps(
    x: &Tensor,
    bank: &FilterBank,
    coupling: Option<Coupling>,
    lambda: f64,
    cfg: &SolverConfig,
    warm: Option<AdmmState>,
) -> Result<MapSolve> {
    cfg.validate()?;
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(DoteError::invalid("lambda must be nonnegative and finite"));
    }
    bank.check_compatible(x.dims())?;
    let dims = x.dims().to_vec();
    let n: usize = dims.iter().product();
    let k = bank.count();
    let sigma = cfg.sigma;

    let xspec = fft_forward(x)?;
    let fspec = SpectralStack::from_bank(bank, &dims)?;
    let coup = coupling
        .as_ref()
        .map(|c| CouplingData::build(c, &dims))
        .transpose()?;

    // The normal matrix per frequency is fixed for the whole solve:
    // conj(f) f^T + sigma I + 2 beta G^T G. Factor once, reuse per
    // iteration.
    let factors: Vec<nalgebra::linalg::LU<Complex64, Dyn, Dyn>> = (0..n)
        .map(|w| {
            let mut m = DMatrix::<Complex64>::zeros(k, k);
            for r in 0..k {
                let fr = fspec.channels[r][w].conj();
                for c in 0..k {
                    let mut v = fr * fspec.channels[c][w];
                    if let Some(cd) = &coup {
                        v += Complex64::new(cd.gram[(r, c)], 0.0);
                    }
                    if r == c {
                        v += Complex64::new(sigma, 0.0);
                    }
                    m[(r, c)] = v;
                }
            }
            m.lu()
        })
        .collect();

    let (mut s, mut u, mut d) = match warm {
        Some(state) => {
            for stack in [&state.primary, &state.auxiliary, &state.scaled_duals] {
                if stack.count() != k || stack.dims() != dims.as_slice() {
                    return Err(DoteError::InvalidCall(
                        "warm-start state does not match the problem shape".into(),
                    ));
                }
            }
            (state.primary, state.auxiliary, state.scaled_duals)
        }
        None => (
            FeatureMapStack::zeros(k, &dims)?,
            FeatureMapStack::zeros(k, &dims)?,
            FeatureMapStack::zeros(k, &dims)?,
        ),
    };

    let eval_objective = |u: &FeatureMapStack| -> Result<f64> {
        let uspec = SpectralStack::from_stack(u)?;
        let mut data_term = 0.0;
        for w in 0..n {
            let mut recon = Complex64::new(0.0, 0.0);
            for ch in 0..k {
                recon += fspec.channels[ch][w] * uspec.channels[ch][w];
            }
            data_term += (xspec.data()[w] - recon).norm_sqr();
        }
        let mut obj = 0.5 * data_term / n as f64 + lambda * u.l1_norm();
        if let Some(cd) = &coup {
            obj += cd.objective(&uspec, n);
        }
        Ok(obj)
    };

    let mut trace = ConvergenceTrace::default();
    // Row 0 records the starting point, so the chosen iterate can never
    // be worse than what the caller handed in.
    let initial_obj = eval_objective(&u)?;
    trace.rows.push(TraceRow {
        iteration: 0,
        objective: initial_obj,
        primal_residual: f64::INFINITY,
        dual_residual: f64::INFINITY,
    });
    let mut best: Option<(f64, FeatureMapStack)> = Some((initial_obj, u.clone()));
    let mut primal_rel = f64::INFINITY;
    let mut dual_rel = f64::INFINITY;

    for it in 1..=cfg.max_inner {
        // Least-squares step over S, per frequency.
        let mut rhs_freq: Vec<Vec<Complex64>> = (0..k)
            .map(|ch| {
                let z = u.map(ch).axpy(-1.0, d.map(ch))?;
                Ok(fft_forward(&z)?.data().to_vec())
            })
            .collect::<Result<Vec<_>>>()?;
        for (ch, rf) in rhs_freq.iter_mut().enumerate() {
            for (w, v) in rf.iter_mut().enumerate() {
                let mut acc = fspec.channels[ch][w].conj() * xspec.data()[w] + sigma * *v;
                if let Some(cd) = &coup {
                    acc += cd.rhs.channels[ch][w];
                }
                *v = acc;
            }
        }
        let mut s_freq: Vec<Vec<Complex64>> = vec![vec![Complex64::new(0.0, 0.0); n]; k];
        let mut rhs_vec = DVector::<Complex64>::zeros(k);
        for w in 0..n {
            for ch in 0..k {
                rhs_vec[ch] = rhs_freq[ch][w];
            }
            let sol = factors[w]
                .solve(&rhs_vec)
                .expect("sigma-regularized normal matrix is nonsingular");
            for ch in 0..k {
                s_freq[ch][w] = sol[ch];
            }
        }
        for ch in 0..k {
            let spec = SpectralTensor::new(dims.clone(), std::mem::take(&mut s_freq[ch]))?;
            *s.map_mut(ch) = fft_inverse_real_part(&spec);
        }

        // Proximal step over the auxiliary copy, then dual ascent.
        let u_prev = u.clone();
        for ch in 0..k {
            let shifted = s.map(ch).axpy(1.0, d.map(ch))?;
            *u.map_mut(ch) = soft_threshold_tensor(&shifted, lambda / sigma)?;
        }
        for ch in 0..k {
            let r = s.map(ch).axpy(-1.0, u.map(ch))?;
            *d.map_mut(ch) = d.map(ch).axpy(1.0, &r)?;
        }

        primal_rel = s.frobenius_distance(&u) / s.squared_frobenius().sqrt().max(1.0);
        dual_rel =
            sigma * u.frobenius_distance(&u_prev) / (sigma * d.squared_frobenius().sqrt()).max(1.0);

        // Objective at the sparse iterate.
        let obj = eval_objective(&u)?;
        trace.rows.push(TraceRow {
            iteration: it,
            objective: obj,
            primal_residual: primal_rel,
            dual_residual: dual_rel,
        });
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, u.clone()));
        }

        if primal_rel.max(dual_rel) < cfg.tol {
            trace.converged = true;
            break;
        }
    }

    let maps = if trace.converged {
        u.clone()
    } else {
        best.map(|(_, m)| m).unwrap_or_else(|| u.clone())
    };
    Ok(MapSolve {
        maps,
        state: AdmmState {
            primary: s,
            auxiliary: u,
            scaled_duals: d,
            penalty: sigma,
            primal_residual: primal_rel,
            dual_residual: dual_rel,
        },
        trace,
    })
}

/// Infers the sparse feature maps of `x` for a fixed bank by ADMM.
///
/// Hitting the iteration cap is not an error: the best recorded iterate
/// comes back with `trace.converged == false`.
///
/// ```
/// use dote::csc::{csc_objective, infer_feature_maps, reconstruct, FilterBank};
/// use dote::grid::{circular_convolve, Tensor};
/// use dote::SolverConfig;
///
/// // Build an image that is exactly one filter convolved with a sparse map,
/// // then ask the solver to find a code of comparable quality.
/// let bank = FilterBank::random_init(2, 3, 2, 7)?;
/// let mut spikes = Tensor::zeros(&[8, 8])?;
/// spikes.set(&[1, 2], 1.0);
/// spikes.set(&[6, 5], -0.8);
/// let image = circular_convolve(&spikes, bank.filter(0))?;
///
/// let cfg = SolverConfig { k: 2, d: 3, max_inner: 500, tol: 1e-8, ..Default::default() };
/// let (maps, trace) = infer_feature_maps(&image, &bank, 0.01, &cfg)?;
/// assert!(trace.converged);
///
/// let refit = reconstruct(&bank, &maps)?;
/// assert!(image.max_abs_diff(&refit)? < 0.05);
/// assert!(csc_objective(&image, &bank, &maps, 0.01)? < 0.5 * image.squared_l2());
/// # Ok::<(), dote::DoteError>(())
/// ```
pub fn infer_feature_maps(
    x: &Tensor,
    bank: &FilterBank,
    lambda: f64,
    cfg: &SolverConfig,
) -> Result<(FeatureMapStack, ConvergenceTrace)> {
    let solve = solve_feature_maps(x, bank, None, lambda, cfg, None)?;
    Ok((solve.maps, solve.trace))
}

/// Solves one side of the coupled problem: the data term and sparsity
/// penalty of this side plus a quadratic tie to the other side's maps
/// through the channel mapping (`Primal`: variable under `W`; `Dual`:
/// variable under the regularized inverse).
#[allow(clippy::too_many_arguments)]
pub fn update_feature_maps_dual(
    x: &Tensor,
    bank: &FilterBank,
    s_other: &FeatureMapStack,
    map: &ChannelMap,
    direction: CouplingDirection,
    lambda: f64,
    beta: f64,
    cfg: &SolverConfig,
) -> Result<(FeatureMapStack, ConvergenceTrace)> {
    let coupling = if beta == 0.0 {
        None
    } else {
        Some(Coupling {
            form: match direction {
                CouplingDirection::Primal => CouplingForm::UnderMap,
                CouplingDirection::Dual => CouplingForm::UnderInverse,
            },
            map,
            other: s_other,
            beta,
        })
    };
    let solve = solve_feature_maps(x, bank, coupling, lambda, cfg, None)?;
    Ok((solve.maps, solve.trace))
}

/// Learns a filter bank for fixed maps over a set of images, one filter
/// at a time.
///
/// Each filter's subproblem is an augmented Lagrangian split between the
/// unconstrained frequency-domain filter and an auxiliary copy projected
/// onto the small support and the unit ball. A filter is only replaced
/// when its update does not increase the data term, so a sweep never
/// degrades the fit.
///
/// ```
/// use dote::csc::{project_unit_ball, update_filters, FeatureMapStack, FilterBank};
/// use dote::grid::{embed_kernel, Tensor};
/// use dote::SolverConfig;
///
/// // With a single one-hot map, the image IS the embedded filter, so the
/// // update recovers it exactly.
/// let kernel = project_unit_ball(&Tensor::new(
///     vec![3, 3],
///     vec![0.6, -0.2, 0.1, 0.0, 0.4, -0.3, 0.2, 0.1, -0.5],
/// )?);
/// let image = embed_kernel(&kernel, &[8, 8])?;
/// let mut delta = Tensor::zeros(&[8, 8])?;
/// delta.set(&[0, 0], 1.0);
/// let maps = FeatureMapStack::new(vec![delta])?;
///
/// let init = FilterBank::new(vec![Tensor::zeros(&[3, 3])?])?;
/// let cfg = SolverConfig { k: 1, d: 3, max_inner: 200, tol: 1e-12, ..Default::default() };
/// let learned = update_filters(&[(&image, &maps)], &init, &cfg)?;
/// assert!(learned.filter(0).max_abs_diff(&kernel)? < 1e-6);
/// # Ok::<(), dote::DoteError>(())
/// ```
#[allow(clippy::needless_range_loop)]
pub fn update_filters(
    pairs: &[(&Tensor, &FeatureMapStack)],
    init: &FilterBank,
    cfg: &SolverConfig,
) -> Result<FilterBank> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(DoteError::invalid("update_filters needs at least one pair"));
    }
    let k = init.count();
    let dims = pairs[0].0.dims().to_vec();
    let n: usize = dims.iter().product();
    let sigma = cfg.sigma;
    for (i, (img, maps)) in pairs.iter().enumerate() {
        if img.dims() != dims.as_slice() {
            return Err(DoteError::dims(format!(
                "pair {i}: image dims {:?} differ from {:?}",
                img.dims(),
                dims
            )));
        }
        if maps.dims() != dims.as_slice() || maps.count() != k {
            return Err(DoteError::dims(format!(
                "pair {i}: maps do not match image dims or filter count"
            )));
        }
    }
    init.check_compatible(&dims)?;

    let kernel_dims = vec![init.support(); init.rank()];
    let img_specs: Vec<Vec<Complex64>> = pairs
        .iter()
        .map(|(img, _)| fft_forward(img).map(|s| s.data().to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let map_specs: Vec<SpectralStack> = pairs
        .iter()
        .map(|(_, maps)| SpectralStack::from_stack(maps))
        .collect::<Result<Vec<_>>>()?;

    let mut filt_specs: Vec<Vec<Complex64>> = init
        .filters()
        .iter()
        .map(|f| fft_forward(&embed_kernel(f, &dims)?).map(|s| s.data().to_vec()))
        .collect::<Result<Vec<_>>>()?;

    // Current model spectra per image.
    let mut model: Vec<Vec<Complex64>> = (0..pairs.len())
        .map(|i| {
            let mut acc = vec![Complex64::new(0.0, 0.0); n];
            for ch in 0..k {
                for (a, (f, s)) in acc
                    .iter_mut()
                    .zip(filt_specs[ch].iter().zip(&map_specs[i].channels[ch]))
                {
                    *a += f * s;
                }
            }
            acc
        })
        .collect();

    let data_term = |model: &[Vec<Complex64>]| -> f64 {
        let mut acc = 0.0;
        for (i, m) in model.iter().enumerate() {
            for (x, t) in img_specs[i].iter().zip(m) {
                acc += (x - t).norm_sqr();
            }
        }
        0.5 * acc / n as f64
    };

    // The per-frequency quadratic coefficient of each filter is fixed for
    // the whole call (the maps do not move here).
    let dens: Vec<Vec<f64>> = (0..k)
        .map(|ch| {
            let mut den = vec![0.0f64; n];
            for spec in &map_specs {
                for (d, s) in den.iter_mut().zip(&spec.channels[ch]) {
                    *d += s.norm_sqr();
                }
            }
            den
        })
        .collect();

    let mut filters: Vec<Tensor> = init.filters().to_vec();

    for _sweep in 0..cfg.max_outer.max(1) {
        let mut sweep_change = 0.0f64;
        for ch in 0..k {
            let den = &dens[ch];
            if den.iter().all(|&v| v == 0.0) {
                // Channel is unused by every map: the fit does not
                // constrain this filter, so take the minimum-norm choice.
                let zero = Tensor::zeros(&kernel_dims)?;
                if filters[ch].l2_norm() > 0.0 {
                    sweep_change = sweep_change.max(1.0);
                }
                filters[ch] = zero;
                filt_specs[ch] = vec![Complex64::new(0.0, 0.0); n];
                continue;
            }
            // Residual spectra with filter `ch` taken out.
            let mut num = vec![Complex64::new(0.0, 0.0); n];
            for i in 0..pairs.len() {
                let smap = &map_specs[i].channels[ch];
                for w in 0..n {
                    let resid = img_specs[i][w] - model[i][w] + filt_specs[ch][w] * smap[w];
                    num[w] += smap[w].conj() * resid;
                }
            }

            // ADMM between the frequency-domain filter and its
            // constrained spatial copy.
            let mut v = embed_kernel(&filters[ch], &dims)?;
            let mut dual = Tensor::zeros(&dims)?;
            let mut f_spatial;
            for _ in 0..cfg.max_inner {
                let vspec = fft_forward(&v)?;
                let dspec = fft_forward(&dual)?;
                let fdata: Vec<Complex64> = (0..n)
                    .map(|w| {
                        (num[w] + sigma * (vspec.data()[w] - dspec.data()[w])) / (den[w] + sigma)
                    })
                    .collect();
                f_spatial = fft_inverse_real_part(&SpectralTensor::new(dims.clone(), fdata)?);

                let shifted = f_spatial.axpy(1.0, &dual)?;
                let projected = embed_kernel(
                    &project_unit_ball(&crop_kernel(&shifted, &kernel_dims)?),
                    &dims,
                )?;
                let v_prev = std::mem::replace(&mut v, projected);

                let r = f_spatial.axpy(-1.0, &v)?;
                dual = dual.axpy(1.0, &r)?;

                let primal_rel = r.l2_norm() / f_spatial.l2_norm().max(1.0);
                let dual_rel = sigma * v.max_abs_diff(&v_prev)? / (sigma * dual.l2_norm()).max(1.0);
                if primal_rel.max(dual_rel) < cfg.tol {
                    break;
                }
            }

            let candidate = crop_kernel(&v, &kernel_dims)?;
            let cand_spec = fft_forward(&embed_kernel(&candidate, &dims)?)?;
            let mut model_new = model.clone();
            for (i, m) in model_new.iter_mut().enumerate() {
                let smap = &map_specs[i].channels[ch];
                for w in 0..n {
                    m[w] += (cand_spec.data()[w] - filt_specs[ch][w]) * smap[w];
                }
            }
            let before = data_term(&model);
            let after = data_term(&model_new);
            // A candidate that worsened the fit (under-solved subproblem)
            // is discarded, so a sweep never degrades the objective.
            if after <= before + 1e-12 * before.max(1.0) {
                let change = candidate.max_abs_diff(&filters[ch])? / filters[ch].l2_norm().max(1.0);
                sweep_change = sweep_change.max(change);
                filters[ch] = candidate;
                filt_specs[ch] = cand_spec.data().to_vec();
                model = model_new;
            }
        }
        if sweep_change < cfg.tol {
            break;
        }
    }

    FilterBank::new(filters.into_iter().map(|f| project_unit_ball(&f)).collect())
}
