//! Joint optimization of the dictionary and per-image mixing weights.
//!
//! The objective for a batch `B` is the mean over its images of
//! `||x - S w||^2 + lambda * || |STFT(x)| - |STFT(S w)| ||_1`. Gradients are
//! derived by hand: through the linear synthesis, the softplus/sine atom
//! parameterization, the tanh modulation network and the STFT magnitudes.
//! Adam updates every parameter densely each step.

use std::fmt;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{make_time_grid, ImageSignal, TimeGrid};
use crate::dictionary::{
    BasisMatrix, DictionaryInit, Evaluation, FrequencyInit, MixingVector, SpectralDictionary,
};
use crate::error::{Error, Result};
use crate::prior::{cholesky, cholesky_solve};
use crate::rng::SeededRng;
use crate::stft::{Spectrogram, Stft, StftConfig};

/// Stream tags for [`SeededRng::derive`].
const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;

const OVERFLOW: &str = "none; the loss overflowed with finite parameters";

/// How the mixing matrix is filled before the first step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixingInit {
    Zero,
    /// Ridge projection of each image onto the initial basis.
    Ridge,
}

impl MixingInit {
    pub(crate) fn code(self) -> u8 {
        match self {
            MixingInit::Zero => 0,
            MixingInit::Ridge => 1,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(MixingInit::Zero),
            1 => Some(MixingInit::Ridge),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda_stft: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    pub atoms: usize,
    pub hidden: usize,
    pub stft: StftConfig,
    pub frequency_init: FrequencyInit,
    pub hidden_scale: f64,
    pub mixing_init: MixingInit,
    /// Ridge penalty used by [`MixingInit::Ridge`].
    pub init_ridge: f64,
    /// Worker threads for per-image work; 0 runs everything on the caller's thread.
    /// Results are identical either way.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            learning_rate: 1e-3,
            lambda_stft: 0.1,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
            atoms: 256,
            hidden: 64,
            stft: StftConfig::default(),
            frequency_init: FrequencyInit::Spectrum,
            hidden_scale: 30.0,
            mixing_init: MixingInit::Zero,
            init_ridge: 1e-3,
            threads: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(what.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be a finite non-negative number");
        }
        if !(self.lambda_stft >= 0.0) || !self.lambda_stft.is_finite() {
            return bad("lambda_stft must be non-negative");
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::InvalidArgument(format!("{name} must lie in (0, 1)")));
            }
        }
        if !(self.adam_epsilon > 0.0) {
            return bad("adam_epsilon must be positive");
        }
        if self.atoms == 0 || self.hidden == 0 {
            return bad("atoms and hidden must be positive");
        }
        if !(self.hidden_scale >= 0.0) || !(self.init_ridge >= 0.0) {
            return bad("hidden_scale and init_ridge must be non-negative");
        }
        self.stft.validate()
    }

    pub fn dictionary_init(&self) -> DictionaryInit {
        DictionaryInit {
            atoms: self.atoms,
            hidden: self.hidden,
            frequency: self.frequency_init,
            hidden_scale: self.hidden_scale,
            ..DictionaryInit::default()
        }
    }
}

/// One row of mixing weights per training image.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    /// `N x K`.
    pub rows: Array2<f64>,
}

impl MixingMatrix {
    pub fn zeros(images: usize, atoms: usize) -> Self {
        Self {
            rows: Array2::zeros((images, atoms)),
        }
    }

    pub fn images(&self) -> usize {
        self.rows.nrows()
    }

    pub fn atoms(&self) -> usize {
        self.rows.ncols()
    }

    pub fn row(&self, n: usize) -> MixingVector {
        MixingVector(self.rows.row(n).to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Amplitudes,
    Frequencies,
    Phases,
    Modnet,
    Mixing,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 5] = [
        ParamGroup::Amplitudes,
        ParamGroup::Frequencies,
        ParamGroup::Phases,
        ParamGroup::Modnet,
        ParamGroup::Mixing,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Amplitudes => "amplitudes",
            ParamGroup::Frequencies => "frequencies",
            ParamGroup::Phases => "phases",
            ParamGroup::Modnet => "modnet",
            ParamGroup::Mixing => "mixing",
        }
    }
}

/// Index map of the flattened trainable set:
/// `a0 (K) | f0 (K) | p0 (K) | input_weights (H) | input_bias (H) |
/// output_weights (3K x H) | output_bias (3K) | mixing (N x K)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParameterLayout {
    pub atoms: usize,
    pub hidden: usize,
    pub images: usize,
}

impl ParameterLayout {
    pub fn dictionary_len(&self) -> usize {
        let (k, h) = (self.atoms, self.hidden);
        3 * k + 2 * h + 3 * k * h + 3 * k
    }

    pub fn total_len(&self) -> usize {
        self.dictionary_len() + self.images * self.atoms
    }

    pub fn group_of(&self, index: usize) -> ParamGroup {
        let k = self.atoms;
        match index {
            i if i < k => ParamGroup::Amplitudes,
            i if i < 2 * k => ParamGroup::Frequencies,
            i if i < 3 * k => ParamGroup::Phases,
            i if i < self.dictionary_len() => ParamGroup::Modnet,
            _ => ParamGroup::Mixing,
        }
    }

    /// Human-readable name of a flat index, e.g. `output_weights[4][1]`.
    pub fn describe(&self, index: usize) -> String {
        let (k, h) = (self.atoms, self.hidden);
        let mut i = index;
        let sections: [(&str, usize, usize); 8] = [
            ("base_amplitude", k, 0),
            ("base_frequency", k, 0),
            ("base_phase", k, 0),
            ("input_weights", h, 0),
            ("input_bias", h, 0),
            ("output_weights", 3 * k * h, h),
            ("output_bias", 3 * k, 0),
            ("mixing", self.images * k, k),
        ];
        for (name, len, cols) in sections {
            if i < len {
                return if cols == 0 {
                    format!("{name}[{i}]")
                } else {
                    format!("{name}[{}][{}]", i / cols, i % cols)
                };
            }
            i -= len;
        }
        format!("<index {index} out of range>")
    }
}

/// All trainable values in one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    pub layout: ParameterLayout,
    pub values: Vec<f64>,
}

impl ParameterSet {
    pub fn pack(dict: &SpectralDictionary, mixing: &MixingMatrix) -> Self {
        let layout = ParameterLayout {
            atoms: dict.atoms(),
            hidden: dict.hidden_width(),
            images: mixing.images(),
        };
        let mut values = dict.to_flat();
        values.extend(mixing.rows.iter());
        Self { layout, values }
    }

    pub fn unpack_into(&self, dict: &mut SpectralDictionary, mixing: &mut MixingMatrix) {
        let d = self.layout.dictionary_len();
        dict.assign_flat(&self.values[..d]);
        mixing
            .rows
            .as_slice_mut()
            .expect("standard layout")
            .copy_from_slice(&self.values[d..]);
    }

    pub fn first_non_finite(&self) -> Option<usize> {
        self.values.iter().position(|v| !v.is_finite())
    }
}

/// Standard Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step_count: 0,
        }
    }
}

pub fn adam_step(params: &mut [f64], grad: &[f64], state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    if params.len() != grad.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam: {} parameters, {} gradients, {} moments",
            params.len(),
            grad.len(),
            state.m.len()
        )));
    }
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    state.step_count += 1;
    let t = state.step_count as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for i in 0..params.len() {
        let g = grad[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
    }
    Ok(())
}

/// Squared L2 distance between one image and its reconstruction.
pub fn loss_time(x: &[f64], xhat: &[f64]) -> Result<f64> {
    if x.len() != xhat.len() {
        return Err(Error::Shape(format!(
            "signals of length {} and {} differ",
            x.len(),
            xhat.len()
        )));
    }
    Ok(x.iter().zip(xhat).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Batch-mean loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub time: f64,
    pub freq: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.time + self.freq
    }
}

/// Gradient of the batch loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    /// Dictionary part, laid out as [`SpectralDictionary::to_flat`].
    pub dictionary: Vec<f64>,
    /// One entry per batch item.
    pub mixing: Vec<Vec<f64>>,
}

/// Loss machinery shared by training, evaluation and gradient checking.
#[derive(Debug, Clone)]
pub struct Objective {
    pub lambda: f64,
    stft: Option<Stft>,
}

impl Objective {
    pub fn new(stft: StftConfig, lambda: f64) -> Result<Self> {
        let stft = if lambda > 0.0 { Some(Stft::new(stft)?) } else { None };
        Ok(Self { lambda, stft })
    }

    pub fn target(&self, x: &ImageSignal) -> Result<Option<Spectrogram>> {
        self.stft.as_ref().map(|s| s.magnitude(&x.values)).transpose()
    }

    /// Per-image `(L_time, L_freq)` for a reconstruction.
    pub fn image_terms(&self, x: &ImageSignal, xhat: &[f64]) -> Result<(f64, f64)> {
        let lt = loss_time(&x.values, xhat)?;
        let lf = match &self.stft {
            None => 0.0,
            Some(s) => {
                let target = s.magnitude(&x.values)?;
                s.l1_loss_and_grad(&target, xhat, self.lambda)?.0
            }
        };
        Ok((lt, lf))
    }

    /// Per-image terms plus the gradient with respect to `xhat`.
    fn image_terms_grad(&self, x: &ImageSignal, xhat: &[f64]) -> Result<(f64, f64, Vec<f64>)> {
        let lt = loss_time(&x.values, xhat)?;
        let mut g: Vec<f64> = xhat.iter().zip(&x.values).map(|(a, b)| 2.0 * (a - b)).collect();
        let mut lf = 0.0;
        if let Some(s) = &self.stft {
            let target = s.magnitude(&x.values)?;
            let (l, gf) = s.l1_loss_and_grad(&target, xhat, self.lambda)?;
            lf = l;
            g.iter_mut().zip(gf).for_each(|(a, b)| *a += b);
        }
        Ok((lt, lf, g))
    }
}

fn check_batch(batch: &[(&ImageSignal, &MixingVector)], dict: &SpectralDictionary) -> Result<usize> {
    let first = batch
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let len = first.0.len();
    for (x, w) in batch {
        if x.len() != len {
            return Err(Error::Shape(format!("batch mixes signal lengths {len} and {}", x.len())));
        }
        if w.len() != dict.atoms() {
            return Err(Error::Shape(format!(
                "mixing vector of length {} for {} atoms",
                w.len(),
                dict.atoms()
            )));
        }
    }
    Ok(len)
}

fn map_items<T: Send>(
    pool: Option<&rayon::ThreadPool>,
    n: usize,
    f: impl Fn(usize) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    match pool {
        None => (0..n).map(f).collect(),
        // collect preserves order, so reductions below stay sequential
        Some(p) => p.install(|| (0..n).into_par_iter().map(f).collect()),
    }
}

fn batch_loss_on(
    ev: &Evaluation,
    batch: &[(&ImageSignal, &MixingVector)],
    objective: &Objective,
    pool: Option<&rayon::ThreadPool>,
) -> Result<LossTerms> {
    let terms = map_items(pool, batch.len(), |b| {
        let (x, w) = batch[b];
        let xhat = ev.basis.0.dot(&ArrayView1::from(&w.0[..]));
        objective.image_terms(x, xhat.as_slice().expect("contiguous"))
    })?;
    let scale = 1.0 / batch.len() as f64;
    let mut out = LossTerms::default();
    for (lt, lf) in terms {
        out.time += lt * scale;
        out.freq += lf * scale;
    }
    Ok(out)
}

/// Reusable gradient buffers.
#[derive(Debug, Default)]
struct Scratch {
    d_basis: Array2<f64>,
    d_out: Array2<f64>,
}

fn batch_grad_on(
    dict: &SpectralDictionary,
    grid: &TimeGrid,
    ev: &Evaluation,
    batch: &[(&ImageSignal, &MixingVector)],
    objective: &Objective,
    pool: Option<&rayon::ThreadPool>,
    scratch: &mut Scratch,
) -> Result<(LossTerms, Gradient)> {
    let scale = 1.0 / batch.len() as f64;
    let s = &ev.basis.0;
    let per_item = map_items(pool, batch.len(), |b| {
        let (x, w) = batch[b];
        let xhat = s.dot(&ArrayView1::from(&w.0[..]));
        let (lt, lf, mut g) = objective.image_terms_grad(x, xhat.as_slice().expect("contiguous"))?;
        g.iter_mut().for_each(|v| *v *= scale);
        let gw = s.t().dot(&ArrayView1::from(&g[..])).to_vec();
        Ok((lt, lf, g, gw))
    })?;
    let (t_len, k) = s.dim();
    let mut g_mat = Array2::zeros((t_len, batch.len()));
    let mut w_mat = Array2::zeros((batch.len(), k));
    let mut terms = LossTerms::default();
    let mut mixing = Vec::with_capacity(batch.len());
    for (b, (lt, lf, g, gw)) in per_item.into_iter().enumerate() {
        terms.time += lt * scale;
        terms.freq += lf * scale;
        g_mat.column_mut(b).assign(&ArrayView1::from(&g[..]));
        w_mat.row_mut(b).assign(&ArrayView1::from(&batch[b].1 .0[..]));
        mixing.push(gw);
    }
    // dL/dS = sum_b g_b w_b^T
    if scratch.d_basis.dim() != (t_len, k) {
        scratch.d_basis = Array2::zeros((t_len, k));
    }
    general_mat_mul(1.0, &g_mat, &w_mat, 0.0, &mut scratch.d_basis);
    let dictionary = dict.backward(grid, ev, &scratch.d_basis, &mut scratch.d_out);
    Ok((terms, Gradient { dictionary, mixing }))
}

/// Batch-mean `L_time + L_freq` with the grid implied by the signal length.
pub fn total_loss(batch: &[(&ImageSignal, &MixingVector)], dict: &SpectralDictionary, cfg: &TrainConfig) -> Result<f64> {
    Ok(loss_terms(batch, dict, cfg)?.total())
}

pub fn loss_terms(batch: &[(&ImageSignal, &MixingVector)], dict: &SpectralDictionary, cfg: &TrainConfig) -> Result<LossTerms> {
    let len = check_batch(batch, dict)?;
    let grid = make_time_grid(len)?;
    let ev = dict.evaluate(&grid);
    let objective = Objective::new(cfg.stft, cfg.lambda_stft)?;
    batch_loss_on(&ev, batch, &objective, None)
}

/// Exact gradient of [`total_loss`] with respect to the dictionary and each
/// batch item's mixing vector.
pub fn backward(batch: &[(&ImageSignal, &MixingVector)], dict: &SpectralDictionary, cfg: &TrainConfig) -> Result<Gradient> {
    let len = check_batch(batch, dict)?;
    let grid = make_time_grid(len)?;
    let ev = dict.evaluate(&grid);
    let objective = Objective::new(cfg.stft, cfg.lambda_stft)?;
    Ok(batch_grad_on(dict, &grid, &ev, batch, &objective, None, &mut Scratch::default())?.1)
}

/// `argmin_w ||x - S w||^2 + lambda ||w||^2`, solved through the Cholesky
/// factor of the normal matrix.
pub fn encode_ridge(x: &ImageSignal, basis: &BasisMatrix, lambda: f64) -> Result<MixingVector> {
    Ok(RidgeEncoder::new(basis, lambda)?.encode(x)?)
}

/// Factorized normal equations for repeated ridge encoding against one basis.
#[derive(Debug, Clone)]
pub struct RidgeEncoder<'a> {
    basis: &'a BasisMatrix,
    chol: Array2<f64>,
}

impl<'a> RidgeEncoder<'a> {
    pub fn new(basis: &'a BasisMatrix, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!("ridge penalty {lambda} is negative")));
        }
        let s = &basis.0;
        let mut normal = s.t().dot(s);
        for i in 0..normal.nrows() {
            normal[[i, i]] += lambda;
        }
        let chol = cholesky(&normal).map_err(|_| Error::Singular)?;
        Ok(Self { basis, chol })
    }

    pub fn encode(&self, x: &ImageSignal) -> Result<MixingVector> {
        if x.len() != self.basis.len() {
            return Err(Error::Shape(format!(
                "signal of length {} for a basis of {} rows",
                x.len(),
                self.basis.len()
            )));
        }
        let rhs = self.basis.0.t().dot(&ArrayView1::from(&x.values[..]));
        let w = cholesky_solve(&self.chol, rhs.as_slice().expect("contiguous"));
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular);
        }
        Ok(MixingVector(w))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLoss {
    pub epoch: usize,
    pub step: usize,
    pub terms: LossTerms,
}

/// Dataset-wide mean losses evaluated with the parameters at the end of an epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub terms: LossTerms,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossHistory {
    /// Batch-mean losses at each step, computed before that step's update.
    pub steps: Vec<StepLoss>,
    pub epochs: Vec<EpochLoss>,
}

impl LossHistory {
    /// CSV with header `epoch,L_time,L_freq,total`, epochs numbered from 1.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,L_time,L_freq,total\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.epoch,
                crate::fmt_f64(e.terms.time),
                crate::fmt_f64(e.terms.freq),
                crate::fmt_f64(e.terms.total())
            ));
        }
        out
    }
}

/// Trained parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub dictionary: SpectralDictionary,
    pub mixing: MixingMatrix,
}

/// Stateful training loop; [`train`] drives it to completion.
pub struct Trainer<'d> {
    data: &'d [ImageSignal],
    cfg: TrainConfig,
    grid: TimeGrid,
    objective: Objective,
    model: Model,
    adam: AdamState,
    shuffle: SeededRng,
    pool: Option<rayon::ThreadPool>,
    /// Forward pass at the current parameters when `fresh`.
    cache: Evaluation,
    fresh: bool,
    scratch: Scratch,
    epoch: usize,
    step: usize,
    history: LossHistory,
}

impl<'d> Trainer<'d> {
    pub fn new(data: &'d [ImageSignal], cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let first = data
            .first()
            .ok_or_else(|| Error::InvalidArgument("training set is empty".into()))?;
        let len = first.len();
        if data.iter().any(|x| x.len() != len) {
            return Err(Error::Shape("training signals differ in length".into()));
        }
        if cfg.lambda_stft > 0.0 {
            cfg.stft.frames(len)?;
        }
        let grid = make_time_grid(len)?;
        let mut init_rng = SeededRng::derive(cfg.seed, INIT_STREAM);
        let dictionary = SpectralDictionary::initialize(&cfg.dictionary_init(), len, data, &mut init_rng)?;
        let mut mixing = MixingMatrix::zeros(data.len(), cfg.atoms);
        let cache = dictionary.evaluate(&grid);
        if cfg.mixing_init == MixingInit::Ridge {
            let enc = RidgeEncoder::new(&cache.basis, cfg.init_ridge)?;
            for (n, x) in data.iter().enumerate() {
                let w = enc.encode(x)?;
                mixing.rows.row_mut(n).assign(&ArrayView1::from(&w.0[..]));
            }
        }
        let pool = if cfg.threads > 0 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(cfg.threads)
                    .build()
                    .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };
        let layout_len = dictionary.param_count() + mixing.rows.len();
        Ok(Self {
            data,
            objective: Objective::new(cfg.stft, cfg.lambda_stft)?,
            grid,
            model: Model { dictionary, mixing },
            adam: AdamState::new(layout_len),
            shuffle: SeededRng::derive(cfg.seed, SHUFFLE_STREAM),
            pool,
            cache,
            fresh: true,
            scratch: Scratch::default(),
            epoch: 0,
            step: 0,
            history: LossHistory::default(),
            cfg,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn history(&self) -> &LossHistory {
        &self.history
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    fn refresh(&mut self) {
        if !self.fresh {
            self.model.dictionary.evaluate_into(&self.grid, &mut self.cache);
            self.fresh = true;
        }
    }

    /// Runs one shuffled pass over the data, then evaluates the full set.
    pub fn run_epoch(&mut self) -> Result<EpochLoss> {
        let n = self.data.len();
        let mut order: Vec<usize> = (0..n).collect();
        self.shuffle.shuffle(&mut order);
        let epoch = self.epoch + 1;
        for chunk in order.chunks(self.cfg.batch_size) {
            self.step_on(epoch, chunk)?;
        }
        self.epoch = epoch;
        let terms = self.dataset_losses()?;
        if !terms.total().is_finite() {
            let params = ParameterSet::pack(&self.model.dictionary, &self.model.mixing);
            return Err(Error::NonFinite {
                epoch,
                step: self.step,
                parameter: params
                    .first_non_finite()
                    .map_or_else(|| OVERFLOW.to_string(), |i| params.layout.describe(i)),
            });
        }
        let record = EpochLoss { epoch, terms };
        self.history.epochs.push(record);
        Ok(record)
    }

    fn step_on(&mut self, epoch: usize, indices: &[usize]) -> Result<()> {
        let rows: Vec<MixingVector> = indices.iter().map(|&i| self.model.mixing.row(i)).collect();
        let batch: Vec<(&ImageSignal, &MixingVector)> =
            indices.iter().zip(&rows).map(|(&i, w)| (&self.data[i], w)).collect();
        self.refresh();
        let (terms, grad) = batch_grad_on(
            &self.model.dictionary,
            &self.grid,
            &self.cache,
            &batch,
            &self.objective,
            self.pool.as_ref(),
            &mut self.scratch,
        )?;
        self.step += 1;
        let mut params = ParameterSet::pack(&self.model.dictionary, &self.model.mixing);
        if !terms.total().is_finite() {
            let parameter = match params.first_non_finite() {
                Some(i) => params.layout.describe(i),
                None => {
                    let flat = scatter_gradient(&params.layout, &grad, indices);
                    match flat.iter().position(|v| !v.is_finite()) {
                        Some(i) => format!("gradient of {}", params.layout.describe(i)),
                        None => OVERFLOW.to_string(),
                    }
                }
            };
            return Err(Error::NonFinite {
                epoch,
                step: self.step,
                parameter,
            });
        }
        self.history.steps.push(StepLoss {
            epoch,
            step: self.step,
            terms,
        });
        let flat = scatter_gradient(&params.layout, &grad, indices);
        adam_step(&mut params.values, &flat, &mut self.adam, &self.cfg)?;
        if let Some(i) = params.first_non_finite() {
            return Err(Error::NonFinite {
                epoch,
                step: self.step,
                parameter: params.layout.describe(i),
            });
        }
        params.unpack_into(&mut self.model.dictionary, &mut self.model.mixing);
        self.fresh = false;
        Ok(())
    }

    /// Mean per-image losses over the whole training set at the current parameters.
    pub fn dataset_losses(&mut self) -> Result<LossTerms> {
        self.refresh();
        let ev = &self.cache;
        let rows: Vec<MixingVector> = (0..self.data.len()).map(|i| self.model.mixing.row(i)).collect();
        let batch: Vec<(&ImageSignal, &MixingVector)> = self.data.iter().zip(&rows).collect();
        batch_loss_on(ev, &batch, &self.objective, self.pool.as_ref())
    }

    pub fn finish(self) -> (Model, LossHistory) {
        (self.model, self.history)
    }
}

/// Places batch gradients into a full-length flat vector.
fn scatter_gradient(layout: &ParameterLayout, grad: &Gradient, indices: &[usize]) -> Vec<f64> {
    let d = layout.dictionary_len();
    let k = layout.atoms;
    let mut flat = vec![0.0; layout.total_len()];
    flat[..d].copy_from_slice(&grad.dictionary);
    for (&n, gw) in indices.iter().zip(&grad.mixing) {
        flat[d + n * k..d + (n + 1) * k].copy_from_slice(gw);
    }
    flat
}

/// Runs `cfg.epochs` epochs of mini-batch Adam.
pub fn train(data: &[ImageSignal], cfg: &TrainConfig) -> Result<(Model, LossHistory)> {
    let mut trainer = Trainer::new(data, cfg.clone())?;
    for _ in 0..cfg.epochs {
        trainer.run_epoch()?;
    }
    Ok(trainer.finish())
}

/// Small random problem for comparing analytic and numeric gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    pub seed: u64,
    pub len: usize,
    pub atoms: usize,
    pub hidden: usize,
    pub images: usize,
    pub lambda_stft: f64,
    pub stft: StftConfig,
    pub step: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            len: 64,
            atoms: 4,
            hidden: 3,
            images: 2,
            lambda_stft: 0.5,
            stft: StftConfig {
                frame_length: 16,
                hop_length: 8,
                window: crate::stft::Window::Hann,
            },
            step: 1e-5,
        }
    }
}

/// A fixed dataset, dictionary and mixing matrix whose batch is the whole set.
#[derive(Debug, Clone)]
pub struct GradProblem {
    pub data: Vec<ImageSignal>,
    pub model: Model,
    pub objective_cfg: TrainConfig,
}

impl GradProblem {
    pub fn random(cfg: &GradCheckConfig) -> Result<Self> {
        let mut rng = SeededRng::new(cfg.seed);
        let (k, h) = (cfg.atoms, cfg.hidden);
        let amps: Vec<f64> = (0..k).map(|_| rng.uniform_in(0.3, 1.5)).collect();
        let freqs: Vec<f64> = (0..k).map(|_| rng.uniform_in(0.5, 6.0)).collect();
        let phases: Vec<f64> = (0..k).map(|_| rng.uniform_in(0.0, 2.0 * std::f64::consts::PI)).collect();
        let mut dict = SpectralDictionary::from_effective(&amps, &freqs, &phases, h)?;
        for v in dict
            .modnet
            .input_weights
            .iter_mut()
            .chain(dict.modnet.input_bias.iter_mut())
            .chain(dict.modnet.output_weights.iter_mut())
            .chain(dict.modnet.output_bias.iter_mut())
        {
            *v = rng.uniform_in(-0.5, 0.5);
        }
        let mixing = MixingMatrix {
            rows: Array2::from_shape_fn((cfg.images, k), |_| rng.uniform_in(-1.0, 1.0)),
        };
        let data = (0..cfg.images)
            .map(|_| ImageSignal::new((0..cfg.len).map(|_| rng.uniform_in(-1.0, 1.0)).collect()))
            .collect();
        let objective_cfg = TrainConfig {
            lambda_stft: cfg.lambda_stft,
            stft: cfg.stft,
            atoms: k,
            hidden: h,
            ..TrainConfig::default()
        };
        Ok(Self {
            data,
            model: Model { dictionary: dict, mixing },
            objective_cfg,
        })
    }

    pub fn layout(&self) -> ParameterLayout {
        ParameterSet::pack(&self.model.dictionary, &self.model.mixing).layout
    }

    pub fn params(&self) -> ParameterSet {
        ParameterSet::pack(&self.model.dictionary, &self.model.mixing)
    }

    fn with_params(&self, values: &[f64]) -> Model {
        let mut model = self.model.clone();
        let set = ParameterSet {
            layout: self.layout(),
            values: values.to_vec(),
        };
        set.unpack_into(&mut model.dictionary, &mut model.mixing);
        model
    }

    fn rows(model: &Model) -> Vec<MixingVector> {
        (0..model.mixing.images()).map(|i| model.mixing.row(i)).collect()
    }

    pub fn loss_at(&self, values: &[f64]) -> Result<f64> {
        let model = self.with_params(values);
        let rows = Self::rows(&model);
        let batch: Vec<_> = self.data.iter().zip(&rows).collect();
        total_loss(&batch, &model.dictionary, &self.objective_cfg)
    }

    /// Analytic gradient as one flat vector in [`ParameterLayout`] order.
    pub fn analytic(&self) -> Result<Vec<f64>> {
        let rows = Self::rows(&self.model);
        let batch: Vec<_> = self.data.iter().zip(&rows).collect();
        let grad = backward(&batch, &self.model.dictionary, &self.objective_cfg)?;
        let idx: Vec<usize> = (0..self.data.len()).collect();
        Ok(scatter_gradient(&self.layout(), &grad, &idx))
    }

    /// Signs of every spectrogram residual and DC/Nyquist real part; a change
    /// between two parameter points means a kink of the L1 term lies between them.
    fn kink_signature(&self, values: &[f64]) -> Result<Vec<i8>> {
        if self.objective_cfg.lambda_stft == 0.0 {
            return Ok(Vec::new());
        }
        let model = self.with_params(values);
        let grid = make_time_grid(self.data[0].len())?;
        let basis = synthesize_basis_of(&model.dictionary, &grid);
        let stft = Stft::new(self.objective_cfg.stft)?;
        let mut sig = Vec::new();
        for (n, x) in self.data.iter().enumerate() {
            let xhat = basis.0.dot(&ArrayView1::from(&model.mixing.row(n).0[..]));
            let spectra = stft.spectra(xhat.as_slice().expect("contiguous"))?;
            let target = stft.magnitude(&x.values)?;
            for (m, frame) in spectra.iter().enumerate() {
                for (b, v) in frame.iter().enumerate() {
                    sig.push(crate::stft::sign(v.norm() - target.magnitudes[[b, m]]) as i8);
                    if b == 0 || b == frame.len() - 1 {
                        sig.push(crate::stft::sign(v.re) as i8);
                    }
                }
            }
        }
        Ok(sig)
    }
}

fn synthesize_basis_of(dict: &SpectralDictionary, grid: &TimeGrid) -> BasisMatrix {
    crate::dictionary::synthesize_basis(dict, grid)
}

/// Per-group worst relative error `|a - n| / max(1e-8, |a| + |n|)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_error: Vec<(ParamGroup, f64)>,
    pub tolerance: f64,
    /// Coordinates whose central difference straddled an L1 kink even at the
    /// smallest retried step, and were left out.
    pub skipped: usize,
    pub coordinates: usize,
}

impl GradCheckReport {
    pub fn error_for(&self, group: ParamGroup) -> f64 {
        self.max_error
            .iter()
            .find(|(g, _)| *g == group)
            .map_or(0.0, |(_, e)| *e)
    }

    pub fn failing(&self) -> Vec<ParamGroup> {
        self.max_error
            .iter()
            .filter(|(_, e)| !(*e < self.tolerance))
            .map(|(g, _)| *g)
            .collect()
    }

    pub fn passed(&self) -> bool {
        self.failing().is_empty()
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (g, e) in &self.max_error {
            let verdict = if *e < self.tolerance { "ok" } else { "FAIL" };
            writeln!(f, "{:<12} max rel err {:.3e}  {verdict}", g.name(), e)?;
        }
        write!(
            f,
            "{} coordinates checked, {} skipped at L1 kinks, tolerance {:.1e}",
            self.coordinates, self.skipped, self.tolerance
        )
    }
}

/// Compares `analytic` against central differences of `problem`'s loss.
pub fn compare_gradients(problem: &GradProblem, analytic: &[f64], step: f64, tolerance: f64) -> Result<GradCheckReport> {
    let base = problem.params().values;
    if analytic.len() != base.len() {
        return Err(Error::Shape(format!(
            "analytic gradient has {} entries for {} parameters",
            analytic.len(),
            base.len()
        )));
    }
    let layout = problem.layout();
    let mut worst: Vec<(ParamGroup, f64)> = ParamGroup::ALL
        .iter()
        .filter(|g| (0..base.len()).any(|i| layout.group_of(i) == **g))
        .map(|&g| (g, 0.0))
        .collect();
    let mut skipped = 0;
    let mut point = base.clone();
    for i in 0..base.len() {
        let mut h = step;
        let mut numeric = None;
        for _ in 0..3 {
            point[i] = base[i] + h;
            let sig_p = problem.kink_signature(&point)?;
            let lp = problem.loss_at(&point)?;
            point[i] = base[i] - h;
            let sig_m = problem.kink_signature(&point)?;
            let lm = problem.loss_at(&point)?;
            point[i] = base[i];
            if sig_p == sig_m {
                numeric = Some((lp - lm) / (2.0 * h));
                break;
            }
            h /= 100.0;
        }
        let Some(n) = numeric else {
            skipped += 1;
            continue;
        };
        let a = analytic[i];
        let err = (a - n).abs() / (a.abs() + n.abs()).max(1e-8);
        let g = layout.group_of(i);
        let slot = worst.iter_mut().find(|(gg, _)| *gg == g).expect("group listed");
        if !(err <= slot.1) {
            slot.1 = err;
        }
    }
    Ok(GradCheckReport {
        max_error: worst,
        tolerance,
        skipped,
        coordinates: base.len(),
    })
}

/// Builds a random problem from `cfg` and checks the hand-derived gradient.
pub fn gradient_check(cfg: &GradCheckConfig, tolerance: f64) -> Result<GradCheckReport> {
    let problem = GradProblem::random(cfg)?;
    let analytic = problem.analytic()?;
    compare_gradients(&problem, &analytic, cfg.step, tolerance)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_time_examples() {
        assert_eq!(loss_time(&[0.3, 0.4], &[0.3, 0.4]).unwrap(), 0.0);
        assert_eq!(loss_time(&[1.0, 0.0], &[0.0, 0.0]).unwrap(), 1.0);
        let x = [0.1, -0.7, 0.35, 0.9, -0.2];
        let y = [0.0, 0.2, 0.3, -0.4, 0.1];
        let mut acc = 0.0;
        for i in 0..5 {
            let d = x[i] - y[i];
            acc += d * d;
        }
        assert!((loss_time(&x, &y).unwrap() - acc).abs() < 1e-15);
        assert!(matches!(loss_time(&x, &y[..3]), Err(Error::Shape(_))));
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let cfg = TrainConfig::default();
        let mut p = [0.5];
        let mut st = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut st, &cfg).unwrap();
        assert!((0.5 - p[0] - 0.001).abs() < 1e-10);
        assert_eq!(st.step_count, 1);
        let before = p[0];
        adam_step(&mut p, &[1.0], &mut st, &cfg).unwrap();
        assert!(p[0] < before);
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let cfg = TrainConfig::default();
        let mut p = [0.5, -2.0];
        let mut st = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut st, &cfg).unwrap();
        assert_eq!(p, [0.5, -2.0]);
        assert!(st.v.iter().all(|&v| v >= 0.0));
        assert!(adam_step(&mut p, &[0.0], &mut st, &cfg).is_err());
    }

    #[test]
    fn layout_counts_and_names() {
        let l = ParameterLayout {
            atoms: 4,
            hidden: 3,
            images: 2,
        };
        assert_eq!(l.total_len(), 12 + (3 + 3 + 36 + 12) + 8);
        assert_eq!(l.describe(0), "base_amplitude[0]");
        assert_eq!(l.describe(9), "base_phase[1]");
        assert_eq!(l.describe(12 + 6 + 4), "output_weights[1][1]");
        assert_eq!(l.describe(l.dictionary_len() + 5), "mixing[1][1]");
        assert_eq!(l.group_of(5), ParamGroup::Frequencies);
        assert_eq!(l.group_of(l.dictionary_len()), ParamGroup::Mixing);
        // bijection: every index gets a distinct name
        let names: std::collections::HashSet<_> = (0..l.total_len()).map(|i| l.describe(i)).collect();
        assert_eq!(names.len(), l.total_len());
    }

    #[test]
    fn pack_unpack_round_trip() {
        let p = GradProblem::random(&GradCheckConfig::default()).unwrap();
        let set = p.params();
        let mut model = Model {
            dictionary: SpectralDictionary::from_effective(&[1.0; 4], &[1.0; 4], &[0.0; 4], 3).unwrap(),
            mixing: MixingMatrix::zeros(2, 4),
        };
        set.unpack_into(&mut model.dictionary, &mut model.mixing);
        assert_eq!(model, p.model);
    }

    #[test]
    fn ridge_with_orthonormal_columns_is_projection() {
        // columns e_0 and (e_1 + e_2)/sqrt 2 of R^4
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let s = BasisMatrix(Array2::from_shape_vec((4, 2), vec![1.0, 0.0, 0.0, r, 0.0, r, 0.0, 0.0]).unwrap());
        let x = ImageSignal::new(vec![0.3, 1.0, -0.5, 2.0]);
        let w = encode_ridge(&x, &s, 0.0).unwrap();
        assert!((w.0[0] - 0.3).abs() < 1e-14);
        assert!((w.0[1] - r * 0.5).abs() < 1e-14);
        let big = encode_ridge(&x, &s, 1e12).unwrap();
        assert!(big.0.iter().all(|v| v.abs() < 1e-11));
    }

    #[test]
    fn ridge_singular_without_penalty() {
        let s = BasisMatrix(Array2::from_shape_vec((3, 2), vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0]).unwrap());
        let x = ImageSignal::new(vec![1.0, 2.0, 3.0]);
        assert!(matches!(encode_ridge(&x, &s, 0.0), Err(Error::Singular)));
        assert!(encode_ridge(&x, &s, 1e-3).is_ok());
    }

    #[test]
    fn gradient_at_zero_mixing_without_stft() {
        let p = GradProblem::random(&GradCheckConfig {
            lambda_stft: 0.0,
            ..GradCheckConfig::default()
        })
        .unwrap();
        let zero = vec![MixingVector::zeros(4), MixingVector::zeros(4)];
        let batch: Vec<_> = p.data.iter().zip(&zero).collect();
        let grad = backward(&batch, &p.model.dictionary, &p.objective_cfg).unwrap();
        let grid = make_time_grid(64).unwrap();
        let s = crate::dictionary::synthesize_basis(&p.model.dictionary, &grid);
        for (n, x) in p.data.iter().enumerate() {
            let expect = s.0.t().dot(&ArrayView1::from(&x.values[..])) * (-2.0 / 2.0);
            for (g, e) in grad.mixing[n].iter().zip(expect.iter()) {
                assert!((g - e).abs() < 1e-12);
            }
        }
        // no reconstruction, no signal to shape the atoms
        assert!(grad.dictionary.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn perfect_reconstruction_has_zero_gradient() {
        let mut p = GradProblem::random(&GradCheckConfig::default()).unwrap();
        let grid = make_time_grid(64).unwrap();
        let s = crate::dictionary::synthesize_basis(&p.model.dictionary, &grid);
        p.data = (0..2)
            .map(|n| crate::dictionary::reconstruct(&s, &p.model.mixing.row(n)).unwrap())
            .collect();
        let g = p.analytic().unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        assert_eq!(p.loss_at(&p.params().values).unwrap(), 0.0);
    }

    #[test]
    fn zero_model_check_reports_zero_error() {
        let mut p = GradProblem::random(&GradCheckConfig::default()).unwrap();
        p.model.mixing = MixingMatrix::zeros(2, 4);
        for x in &mut p.data {
            x.values.iter_mut().for_each(|v| *v = 0.0);
        }
        let a = p.analytic().unwrap();
        let r = compare_gradients(&p, &a, 1e-5, 1e-4).unwrap();
        assert!(r.max_error.iter().all(|(_, e)| *e == 0.0), "{r}");
    }

    #[test]
    fn corrupted_coordinate_is_flagged() {
        let p = GradProblem::random(&GradCheckConfig::default()).unwrap();
        let mut a = p.analytic().unwrap();
        let layout = p.layout();
        let i = layout.atoms + 1; // a frequency coordinate
        a[i] *= 2.0;
        let r = compare_gradients(&p, &a, 1e-5, 1e-4).unwrap();
        assert_eq!(r.failing(), vec![ParamGroup::Frequencies], "{r}");
    }

    #[test]
    fn default_check_passes() {
        let r = gradient_check(&GradCheckConfig::default(), 1e-4).unwrap();
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn zero_learning_rate_keeps_initialization() {
        let data: Vec<ImageSignal> = (0..3)
            .map(|n| ImageSignal::new((0..64).map(|j| ((j * (n + 1)) as f64 * 0.1).sin() * 0.5).collect()))
            .collect();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 2,
            learning_rate: 0.0,
            atoms: 4,
            hidden: 3,
            stft: StftConfig::new(16, 8, crate::stft::Window::Hann).unwrap(),
            ..TrainConfig::default()
        };
        let init = Trainer::new(&data, cfg.clone()).unwrap().model().clone();
        let (model, history) = train(&data, &cfg).unwrap();
        assert_eq!(model, init);
        assert_eq!(history.epochs.len(), 3);
        assert_eq!(history.steps.len(), 6);
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(train(&[], &TrainConfig::default()).is_err());
    }

    #[test]
    fn history_csv_shape() {
        let h = LossHistory {
            steps: vec![],
            epochs: vec![EpochLoss {
                epoch: 1,
                terms: LossTerms { time: 1.5, freq: 0.25 },
            }],
        };
        assert_eq!(
            h.to_csv(),
            "epoch,L_time,L_freq,total\n1,1.5000000000000000e0,2.5000000000000000e-1,1.7500000000000000e0\n"
        );
    }
}
