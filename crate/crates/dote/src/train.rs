//! Joint two-domain training: alternate feature-map inference, filter
//! learning and the channel-mapping update in a closed loop.
//!
//! Each outer sweep updates, in order, the per-pair feature maps of both
//! domains (frequency-domain ADMM, warm-started across sweeps), the two
//! filter banks (one-by-one augmented-Lagrangian updates), and the
//! channel mapping (closed-form ridge solve). With feedback enabled the
//! target-side maps are additionally pulled through the regularized
//! inverse mapping, closing the loop; with it disabled only the forward
//! mapping is learned and the inverse is never formed.

use std::time::Instant;

use crate::csc::{
    solve_feature_maps, update_filters, AdmmState, Coupling, CouplingForm, FeatureMapStack,
    FilterBank,
};
use crate::error::{DoteError, Result};
use crate::mapping::{update_mapping, ChannelMap};
use crate::synthesis::PairedDataset;
use crate::SolverConfig;

/// A trained model: one filter bank per domain, the channel mapping
/// between their feature spaces, and the configuration that produced it.
#[derive(Debug, Clone)]
pub struct DoteModel {
    pub fx: FilterBank,
    pub fy: FilterBank,
    pub w: ChannelMap,
    pub config: SolverConfig,
    pub training_dims: Vec<usize>,
}

impl DoteModel {
    /// Structural consistency: both banks and the mapping agree on K.
    pub fn validate(&self) -> Result<()> {
        if self.fx.count() != self.fy.count() || self.fx.count() != self.w.channels() {
            return Err(DoteError::dims(format!(
                "inconsistent channel counts: fx {}, fy {}, w {}",
                self.fx.count(),
                self.fy.count(),
                self.w.channels()
            )));
        }
        if self.fx.support() != self.fy.support() || self.fx.rank() != self.fy.rank() {
            return Err(DoteError::dims("filter banks must share support and rank"));
        }
        self.config.validate()
    }
}

/// Values of the seven objective terms.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct JointBreakdown {
    pub data_x: f64,
    pub data_y: f64,
    pub l1_x: f64,
    pub l1_y: f64,
    pub coupling_forward: f64,
    pub coupling_feedback: f64,
    pub mapping_ridge: f64,
}

impl JointBreakdown {
    pub fn total(&self) -> f64 {
        self.data_x
            + self.data_y
            + self.l1_x
            + self.l1_y
            + self.coupling_forward
            + self.coupling_feedback
            + self.mapping_ridge
    }
}

/// One outer sweep of the training trace.
#[derive(Debug, Clone, Copy)]
pub struct SweepReport {
    pub iteration: usize,
    pub objective: f64,
    pub breakdown: JointBreakdown,
    pub wall_time_s: f64,
}

/// Per-sweep objective history of a training run.
#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub sweeps: Vec<SweepReport>,
    pub converged: bool,
}

impl TrainReport {
    pub fn final_objective(&self) -> Option<f64> {
        self.sweeps.last().map(|s| s.objective)
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "iteration,objective,data_x,data_y,l1_x,l1_y,coupling_forward,coupling_feedback,mapping_ridge,wall_time_s"
        )?;
        for s in &self.sweeps {
            let b = &s.breakdown;
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                s.iteration,
                s.objective,
                b.data_x,
                b.data_y,
                b.l1_x,
                b.l1_y,
                b.coupling_forward,
                b.coupling_feedback,
                b.mapping_ridge,
                s.wall_time_s
            )?;
        }
        Ok(())
    }
}

fn squared_residual(x: &crate::grid::Tensor, recon: &crate::grid::Tensor) -> f64 {
    x.data()
        .iter()
        .zip(recon.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

fn stack_distance_sq(a: &FeatureMapStack, b: &FeatureMapStack) -> f64 {
    a.maps()
        .iter()
        .zip(b.maps())
        .map(|(m, n)| {
            m.data()
                .iter()
                .zip(n.data())
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>()
        })
        .sum()
}

/// Evaluates the full joint objective over a dataset: two data terms,
/// two sparsity terms, the forward and (when feedback is enabled)
/// feedback coupling terms with the mapping applied across channels at
/// each voxel, and the ridge on the mapping itself.
pub fn joint_objective(
    dataset: &PairedDataset,
    model: &DoteModel,
    sx: &[FeatureMapStack],
    sy: &[FeatureMapStack],
) -> Result<(f64, JointBreakdown)> {
    model.validate()?;
    if dataset.len() != sx.len() || dataset.len() != sy.len() {
        return Err(DoteError::invalid(format!(
            "dataset has {} pairs but got {} source and {} target stacks",
            dataset.len(),
            sx.len(),
            sy.len()
        )));
    }
    let cfg = &model.config;
    let mut b = JointBreakdown::default();
    for ((pair, mx), my) in dataset.pairs().iter().zip(sx).zip(sy) {
        if mx.dims() != pair.source.dims() || my.dims() != pair.target.dims() {
            return Err(DoteError::dims(format!(
                "pair {:?}: stack dims do not match image dims",
                pair.id
            )));
        }
        let recon_x = crate::csc::reconstruct(&model.fx, mx)?;
        let recon_y = crate::csc::reconstruct(&model.fy, my)?;
        b.data_x += 0.5 * squared_residual(&pair.source, &recon_x);
        b.data_y += 0.5 * squared_residual(&pair.target, &recon_y);
        b.l1_x += cfg.lambda * mx.l1_norm();
        b.l1_y += cfg.lambda * my.l1_norm();
        if cfg.beta > 0.0 {
            let forward = model.w.transport(mx)?;
            b.coupling_forward += cfg.beta * stack_distance_sq(my, &forward);
            if cfg.dual_enabled {
                let feedback = model.w.transport_back(my)?;
                b.coupling_feedback += cfg.beta * stack_distance_sq(mx, &feedback);
            }
        }
    }
    b.mapping_ridge = cfg.gamma * model.w.matrix().iter().map(|v| v * v).sum::<f64>();
    Ok((b.total(), b))
}

/// Trains a model on registered pairs by alternating map, filter and
/// mapping updates until the joint objective stalls or `max_outer`
/// sweeps have run.
///
/// ```
/// use dote::grid::Tensor;
/// use dote::synthesis::{ImagePair, PairedDataset};
/// use dote::train::train;
/// use dote::SolverConfig;
///
/// let image = Tensor::new(vec![8, 8], (0..64).map(|v| {
///     0.5 + 0.4 * (std::f64::consts::TAU * v as f64 / 64.0).sin()
/// }).collect())?;
/// let dataset = PairedDataset::new(
///     vec![ImagePair { id: "p0".into(), source: image.clone(), target: image }],
///     "m1",
///     "m2",
/// )?;
///
/// let cfg = SolverConfig { k: 2, d: 3, max_outer: 3, max_inner: 20, ..Default::default() };
/// let (model, report) = train(&dataset, &cfg)?;
/// assert_eq!(model.fx.count(), model.w.channels());
/// assert_eq!(report.sweeps.len(), 3);
/// // The joint objective never increases from sweep to sweep.
/// for pair in report.sweeps.windows(2) {
///     assert!(pair[1].objective <= pair[0].objective + 1e-6);
/// }
/// # Ok::<(), dote::DoteError>(())
/// ```
pub fn train(dataset: &PairedDataset, cfg: &SolverConfig) -> Result<(DoteModel, TrainReport)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(DoteError::invalid("cannot train on an empty dataset"));
    }
    let dims = dataset
        .uniform_dims()
        .ok_or_else(|| DoteError::dims("training requires every pair to share one common grid"))?
        .to_vec();
    let rank = dims.len();
    if dims.iter().any(|&e| e < cfg.d) {
        return Err(DoteError::dims(format!(
            "filter support {} exceeds training dims {:?}",
            cfg.d, dims
        )));
    }

    // Both banks start from the same draw; with identical domains the
    // whole loop then stays symmetric and the mapping settles near the
    // identity instead of an arbitrary code translation.
    let mut fx = FilterBank::random_init(cfg.k, cfg.d, rank, cfg.seed)?;
    let mut fy = fx.clone();
    let mut w = ChannelMap::identity(cfg.k)?;

    let n_pairs = dataset.len();
    let mut sx_maps: Vec<FeatureMapStack> = (0..n_pairs)
        .map(|_| FeatureMapStack::zeros(cfg.k, &dims))
        .collect::<Result<_>>()?;
    let mut sy_maps = sx_maps.clone();
    let mut sx_state: Vec<Option<AdmmState>> = vec![None; n_pairs];
    let mut sy_state: Vec<Option<AdmmState>> = vec![None; n_pairs];

    let mut report = TrainReport::default();
    let started = Instant::now();
    let mut prev_objective: Option<f64> = None;

    for sweep in 1..=cfg.max_outer {
        // (a) Feature maps, source side then target side per pair.
        for (i, pair) in dataset.pairs().iter().enumerate() {
            let coupling_x = (cfg.beta > 0.0).then_some(Coupling {
                form: CouplingForm::UnderMap,
                map: &w,
                other: &sy_maps[i],
                beta: cfg.beta,
            });
            let solve_x = solve_feature_maps(
                &pair.source,
                &fx,
                coupling_x,
                cfg.lambda,
                cfg,
                sx_state[i].take(),
            )?;
            sx_maps[i] = solve_x.maps;
            sx_state[i] = Some(solve_x.state);

            let coupling_y = (cfg.beta > 0.0).then_some(Coupling {
                form: if cfg.dual_enabled {
                    CouplingForm::UnderInverse
                } else {
                    CouplingForm::TowardTransported
                },
                map: &w,
                other: &sx_maps[i],
                beta: cfg.beta,
            });
            let solve_y = solve_feature_maps(
                &pair.target,
                &fy,
                coupling_y,
                cfg.lambda,
                cfg,
                sy_state[i].take(),
            )?;
            sy_maps[i] = solve_y.maps;
            sy_state[i] = Some(solve_y.state);
        }

        // (b) Filter banks.
        let x_pairs: Vec<(&crate::grid::Tensor, &FeatureMapStack)> = dataset
            .pairs()
            .iter()
            .zip(&sx_maps)
            .map(|(p, m)| (&p.source, m))
            .collect();
        fx = update_filters(&x_pairs, &fx, cfg)?;
        let y_pairs: Vec<(&crate::grid::Tensor, &FeatureMapStack)> = dataset
            .pairs()
            .iter()
            .zip(&sy_maps)
            .map(|(p, m)| (&p.target, m))
            .collect();
        fy = update_filters(&y_pairs, &fy, cfg)?;

        // (c) Channel mapping.
        if cfg.beta > 0.0 {
            let sx_refs: Vec<&FeatureMapStack> = sx_maps.iter().collect();
            let sy_refs: Vec<&FeatureMapStack> = sy_maps.iter().collect();
            w = update_mapping(&sx_refs, &sy_refs, cfg.beta, cfg.gamma)?;
        }

        let model = DoteModel {
            fx: fx.clone(),
            fy: fy.clone(),
            w: w.clone(),
            config: cfg.clone(),
            training_dims: dims.clone(),
        };
        debug_assert!(model.validate().is_ok());
        let (objective, breakdown) = joint_objective(dataset, &model, &sx_maps, &sy_maps)?;
        report.sweeps.push(SweepReport {
            iteration: sweep,
            objective,
            breakdown,
            wall_time_s: started.elapsed().as_secs_f64(),
        });

        if let Some(prev) = prev_objective {
            let rel = (prev - objective).abs() / prev.abs().max(1e-12);
            if rel < cfg.tol {
                report.converged = true;
                break;
            }
        }
        prev_objective = Some(objective);
    }

    let model = DoteModel {
        fx,
        fy,
        w,
        config: cfg.clone(),
        training_dims: dims,
    };
    model.validate()?;
    Ok((model, report))
}
