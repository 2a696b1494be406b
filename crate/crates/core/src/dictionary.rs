//! The global spectral dictionary: K sinusoidal atoms whose amplitude,
//! frequency and phase are base values plus time modulations from a small
//! shared network.
//!
//! Atom `i` on the grid point `t` is
//! `softplus(a0_i + da_i(t)) * sin(2 pi softplus(f0_i + df_i(t)) t + p0_i + dp_i(t))`.

use std::f64::consts::PI;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dataset::{ImageSignal, TimeGrid};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::stft::dft_any;

/// `log(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `(softplus(x), sigmoid(x))` sharing one exponential.
#[inline]
pub fn softplus_sigmoid(x: f64) -> (f64, f64) {
    let e = (-x.abs()).exp();
    let sig = if x >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
    (x.max(0.0) + e.ln_1p(), sig)
}

/// Inverse of [`softplus`] for `y > 0`.
#[inline]
pub fn softplus_inv(y: f64) -> f64 {
    // log(e^y - 1) = y + log(1 - e^-y)
    y + (-(-y).exp_m1()).ln()
}

/// Derivative of softplus.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Modulation values for one time point, one entry per atom.
#[derive(Debug, Clone, PartialEq)]
pub struct Modulation {
    pub amplitude: Vec<f64>,
    pub frequency: Vec<f64>,
    pub phase: Vec<f64>,
}

/// One hidden tanh layer mapping scalar time to `3K` modulation values
/// laid out as `[amplitude | frequency | phase]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulationNetwork {
    /// Hidden weights for the scalar input, length `H`.
    pub input_weights: Array1<f64>,
    pub input_bias: Array1<f64>,
    /// `3K x H`.
    pub output_weights: Array2<f64>,
    pub output_bias: Array1<f64>,
}

impl ModulationNetwork {
    pub fn zeros(atoms: usize, hidden: usize) -> Self {
        Self {
            input_weights: Array1::zeros(hidden),
            input_bias: Array1::zeros(hidden),
            output_weights: Array2::zeros((3 * atoms, hidden)),
            output_bias: Array1::zeros(3 * atoms),
        }
    }

    pub fn atoms(&self) -> usize {
        self.output_bias.len() / 3
    }

    pub fn hidden_width(&self) -> usize {
        self.input_weights.len()
    }

    pub fn param_count(&self) -> usize {
        2 * self.hidden_width() + self.output_weights.len() + self.output_bias.len()
    }

    fn hidden_at(&self, t: f64) -> Array1<f64> {
        let mut h = &self.input_weights * t + &self.input_bias;
        h.mapv_inplace(f64::tanh);
        h
    }

    pub fn modulate(&self, t: f64) -> Modulation {
        let out = self.output_weights.dot(&self.hidden_at(t)) + &self.output_bias;
        let k = self.atoms();
        Modulation {
            amplitude: out.slice(s![..k]).to_vec(),
            frequency: out.slice(s![k..2 * k]).to_vec(),
            phase: out.slice(s![2 * k..]).to_vec(),
        }
    }

    /// `T x H` hidden activations over a grid.
    fn hidden_into(&self, grid: &[f64], act: &mut Array2<f64>) {
        for (mut row, &t) in act.axis_iter_mut(Axis(0)).zip(grid) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (self.input_weights[j] * t + self.input_bias[j]).tanh();
            }
        }
    }
}

/// How base frequencies and phases are chosen before training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrequencyInit {
    /// Geometric sequence from 1 to `T/4` cycles, uniform random phases.
    Geometric,
    /// Strongest directions of the training set's DFT coefficients, bin by bin.
    Spectrum,
}

impl FrequencyInit {
    pub(crate) fn code(self) -> u8 {
        match self {
            FrequencyInit::Geometric => 0,
            FrequencyInit::Spectrum => 1,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(FrequencyInit::Geometric),
            1 => Some(FrequencyInit::Spectrum),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DictionaryInit {
    pub atoms: usize,
    pub hidden: usize,
    pub frequency: FrequencyInit,
    /// Half-width of the uniform range for hidden weights and biases.
    pub hidden_scale: f64,
    pub amplitude: f64,
}

impl Default for DictionaryInit {
    fn default() -> Self {
        Self {
            atoms: 256,
            hidden: 64,
            frequency: FrequencyInit::Spectrum,
            hidden_scale: 30.0,
            amplitude: 0.1,
        }
    }
}

/// Lowest frequency used when an atom stands in for the DC bin.
pub const MIN_FREQUENCY: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDictionary {
    pub base_amplitude: Array1<f64>,
    pub base_frequency: Array1<f64>,
    pub base_phase: Array1<f64>,
    pub modnet: ModulationNetwork,
}

impl SpectralDictionary {
    /// Dictionary with the given effective base values and a zero modulation network.
    pub fn from_effective(amplitude: &[f64], frequency: &[f64], phase: &[f64], hidden: usize) -> Result<Self> {
        let k = amplitude.len();
        if frequency.len() != k || phase.len() != k {
            return Err(Error::Shape(format!(
                "base vectors have lengths {}, {}, {}",
                k,
                frequency.len(),
                phase.len()
            )));
        }
        if amplitude.iter().chain(frequency).any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidArgument(
                "effective amplitude and frequency must be positive".into(),
            ));
        }
        Ok(Self {
            base_amplitude: amplitude.iter().map(|&a| softplus_inv(a)).collect(),
            base_frequency: frequency.iter().map(|&f| softplus_inv(f)).collect(),
            base_phase: Array1::from(phase.to_vec()),
            modnet: ModulationNetwork::zeros(k, hidden),
        })
    }

    /// Fresh dictionary for signals of length `len`. `data` is required for
    /// [`FrequencyInit::Spectrum`].
    pub fn initialize(init: &DictionaryInit, len: usize, data: &[ImageSignal], rng: &mut SeededRng) -> Result<Self> {
        let k = init.atoms;
        if k == 0 || init.hidden == 0 {
            return Err(Error::InvalidArgument("atom count and hidden width must be positive".into()));
        }
        if len < 2 {
            return Err(Error::InvalidArgument(format!("signal length {len} too short")));
        }
        let (freqs, phases) = match init.frequency {
            FrequencyInit::Geometric => {
                let hi = (len as f64 / 4.0).max(1.0);
                let freqs: Vec<f64> = (0..k)
                    .map(|i| {
                        if k == 1 {
                            1.0
                        } else {
                            hi.powf(i as f64 / (k - 1) as f64)
                        }
                    })
                    .collect();
                let phases = (0..k).map(|_| rng.uniform_in(0.0, 2.0 * PI)).collect();
                (freqs, phases)
            }
            FrequencyInit::Spectrum => spectrum_atoms(data, len, k, rng)?,
        };
        let amps = vec![init.amplitude; k];
        let mut dict = Self::from_effective(&amps, &freqs, &phases, init.hidden)?;
        let s = init.hidden_scale;
        dict.modnet.input_weights.mapv_inplace(|_| rng.uniform_in(-s, s));
        dict.modnet.input_bias.mapv_inplace(|_| rng.uniform_in(-s, s));
        Ok(dict)
    }

    pub fn atoms(&self) -> usize {
        self.base_amplitude.len()
    }

    pub fn hidden_width(&self) -> usize {
        self.modnet.hidden_width()
    }

    pub fn param_count(&self) -> usize {
        3 * self.atoms() + self.modnet.param_count()
    }

    /// Parameters in the fixed order `a0, f0, p0, input_weights, input_bias,
    /// output_weights (row-major), output_bias`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        v.extend(self.base_amplitude.iter());
        v.extend(self.base_frequency.iter());
        v.extend(self.base_phase.iter());
        v.extend(self.modnet.input_weights.iter());
        v.extend(self.modnet.input_bias.iter());
        v.extend(self.modnet.output_weights.iter());
        v.extend(self.modnet.output_bias.iter());
        v
    }

    /// Overwrites every parameter from a slice laid out as in [`Self::to_flat`].
    pub fn assign_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "flat dictionary length");
        let mut it = flat.iter().copied();
        let targets = [
            self.base_amplitude.as_slice_mut().unwrap(),
            self.base_frequency.as_slice_mut().unwrap(),
            self.base_phase.as_slice_mut().unwrap(),
            self.modnet.input_weights.as_slice_mut().unwrap(),
            self.modnet.input_bias.as_slice_mut().unwrap(),
            self.modnet.output_weights.as_slice_mut().unwrap(),
            self.modnet.output_bias.as_slice_mut().unwrap(),
        ];
        for dst in targets {
            for d in dst.iter_mut() {
                *d = it.next().unwrap();
            }
        }
    }

    /// Effective amplitude and frequency of every atom at time `t`.
    pub fn effective_at(&self, t: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let m = self.modnet.modulate(t);
        let amp = (0..self.atoms())
            .map(|i| softplus(self.base_amplitude[i] + m.amplitude[i]))
            .collect();
        let freq = (0..self.atoms())
            .map(|i| softplus(self.base_frequency[i] + m.frequency[i]))
            .collect();
        let phase = (0..self.atoms())
            .map(|i| self.base_phase[i] + m.phase[i])
            .collect();
        (amp, freq, phase)
    }

    /// Forward pass over a grid, keeping the intermediates the gradient needs.
    pub fn evaluate(&self, grid: &TimeGrid) -> Evaluation {
        let mut ev = Evaluation::zeros(grid.len(), self.atoms(), self.hidden_width());
        self.evaluate_into(grid, &mut ev);
        ev
    }

    /// [`Self::evaluate`] reusing the buffers of an earlier evaluation.
    pub fn evaluate_into(&self, grid: &TimeGrid, ev: &mut Evaluation) {
        let t = grid.points();
        let k = self.atoms();
        if ev.shape() != (t.len(), k, self.hidden_width()) {
            *ev = Evaluation::zeros(t.len(), k, self.hidden_width());
        }
        self.modnet.hidden_into(t, &mut ev.hidden);
        general_mat_mul(1.0, &ev.hidden, &self.modnet.output_weights.t(), 0.0, &mut ev.modulation);
        let bias = self.modnet.output_bias.as_slice().expect("contiguous");
        let (ba, bf, bp) = (&bias[..k], &bias[k..2 * k], &bias[2 * k..]);
        let a0 = self.base_amplitude.as_slice().expect("contiguous");
        let f0 = self.base_frequency.as_slice().expect("contiguous");
        let p0 = self.base_phase.as_slice().expect("contiguous");
        for (j, &tj) in t.iter().enumerate() {
            let o = ev.modulation.row(j);
            let o = o.as_slice().expect("row-major");
            let (oa, of, op) = (&o[..k], &o[k..2 * k], &o[2 * k..]);
            let amp = ev.amplitude.row_mut(j).into_slice().expect("row-major");
            let amp_s = ev.amplitude_slope.row_mut(j).into_slice().expect("row-major");
            let freq = ev.frequency.row_mut(j).into_slice().expect("row-major");
            let freq_s = ev.frequency_slope.row_mut(j).into_slice().expect("row-major");
            let sin = ev.sin.row_mut(j).into_slice().expect("row-major");
            let cos = ev.cos.row_mut(j).into_slice().expect("row-major");
            let basis = ev.basis.0.row_mut(j).into_slice().expect("row-major");
            for i in 0..k {
                (amp[i], amp_s[i]) = softplus_sigmoid(a0[i] + ba[i] + oa[i]);
                (freq[i], freq_s[i]) = softplus_sigmoid(f0[i] + bf[i] + of[i]);
                let theta = 2.0 * PI * freq[i] * tj + (p0[i] + bp[i] + op[i]);
                (sin[i], cos[i]) = theta.sin_cos();
                basis[i] = amp[i] * sin[i];
            }
        }
    }

    /// Gradient of a scalar with respect to every dictionary parameter, given
    /// its gradient with respect to the basis matrix. Layout matches [`Self::to_flat`].
    ///
    /// `d_out` is scratch space, resized as needed.
    pub(crate) fn backward(
        &self,
        grid: &TimeGrid,
        ev: &Evaluation,
        d_basis: &Array2<f64>,
        d_out: &mut Array2<f64>,
    ) -> Vec<f64> {
        let t = grid.points();
        let k = self.atoms();
        let (rows, _) = d_basis.dim();
        // d_out columns: [amplitude | frequency | phase]
        if d_out.dim() != (rows, 3 * k) {
            *d_out = Array2::zeros((rows, 3 * k));
        }
        for (j, &tj) in t.iter().enumerate() {
            let g = d_basis.row(j);
            let g = g.as_slice().expect("row-major");
            let (amp, amp_s) = (ev.amplitude.row(j), ev.amplitude_slope.row(j));
            let (freq_s, sin, cos) = (ev.frequency_slope.row(j), ev.sin.row(j), ev.cos.row(j));
            let d = d_out.row_mut(j).into_slice().expect("row-major");
            let (da, rest) = d.split_at_mut(k);
            let (df, dp) = rest.split_at_mut(k);
            let two_pi_t = 2.0 * PI * tj;
            for i in 0..k {
                let d_theta = g[i] * amp[i] * cos[i];
                da[i] = g[i] * amp_s[i] * sin[i];
                df[i] = d_theta * two_pi_t * freq_s[i];
                dp[i] = d_theta;
            }
        }
        let d_bias = d_out.sum_axis(Axis(0));
        let d_w_out = d_out.t().dot(&ev.hidden);
        let mut d_hidden = d_out.dot(&self.modnet.output_weights);
        d_hidden.zip_mut_with(&ev.hidden, |d, &h| *d *= 1.0 - h * h);
        let tv = ArrayView1::from(t);
        let d_w_in = d_hidden.t().dot(&tv);
        let d_b_in = d_hidden.sum_axis(Axis(0));

        let mut flat = Vec::with_capacity(self.param_count());
        // base parameters enter exactly like the output bias
        flat.extend(d_bias.iter());
        flat.extend(d_w_in.iter());
        flat.extend(d_b_in.iter());
        flat.extend(d_w_out.iter());
        flat.extend(d_bias.iter());
        flat
    }
}

/// Intermediates of [`SpectralDictionary::evaluate`], each `T x K` except
/// the hidden activations (`T x H`) and raw network outputs (`T x 3K`).
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub(crate) hidden: Array2<f64>,
    pub(crate) modulation: Array2<f64>,
    /// `softplus` of the amplitude pre-activation and its derivative.
    pub(crate) amplitude: Array2<f64>,
    pub(crate) amplitude_slope: Array2<f64>,
    pub(crate) frequency: Array2<f64>,
    pub(crate) frequency_slope: Array2<f64>,
    pub(crate) sin: Array2<f64>,
    pub(crate) cos: Array2<f64>,
    pub basis: BasisMatrix,
}

impl Evaluation {
    fn zeros(len: usize, atoms: usize, hidden: usize) -> Self {
        let shape = (len, atoms);
        Self {
            hidden: Array2::zeros((len, hidden)),
            modulation: Array2::zeros((len, 3 * atoms)),
            amplitude: Array2::zeros(shape),
            amplitude_slope: Array2::zeros(shape),
            frequency: Array2::zeros(shape),
            frequency_slope: Array2::zeros(shape),
            sin: Array2::zeros(shape),
            cos: Array2::zeros(shape),
            basis: BasisMatrix(Array2::zeros(shape)),
        }
    }

    fn shape(&self) -> (usize, usize, usize) {
        (self.basis.0.nrows(), self.basis.0.ncols(), self.hidden.ncols())
    }

    /// Effective amplitude `softplus(a0 + da(t_j))` of atom `i` at row `j`.
    pub fn amplitude(&self, j: usize, i: usize) -> f64 {
        self.amplitude[[j, i]]
    }

    pub fn frequency(&self, j: usize, i: usize) -> f64 {
        self.frequency[[j, i]]
    }
}

/// `T x K` matrix whose column `i` is atom `i` sampled on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrix(pub Array2<f64>);

impl BasisMatrix {
    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn atoms(&self) -> usize {
        self.0.ncols()
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        self.0.column(i).to_vec()
    }
}

/// Per-image mixing weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingVector(pub Vec<f64>);

impl MixingVector {
    pub fn zeros(k: usize) -> Self {
        Self(vec![0.0; k])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn synthesize_basis(dict: &SpectralDictionary, grid: &TimeGrid) -> BasisMatrix {
    dict.evaluate(grid).basis
}

/// `x_hat = S w`.
pub fn reconstruct(basis: &BasisMatrix, w: &MixingVector) -> Result<ImageSignal> {
    if basis.atoms() != w.len() {
        return Err(Error::Shape(format!(
            "basis has {} atoms but mixing vector has {} entries",
            basis.atoms(),
            w.len()
        )));
    }
    let wv = ArrayView1::from(&w.0[..]);
    Ok(ImageSignal::new(basis.0.dot(&wv).to_vec()))
}

/// Picks `k` (frequency, phase) pairs from the per-bin principal directions of
/// the training set's DFT coefficients, ranked by the signal energy each
/// direction carries. Frequencies are expressed in cycles over the `[0, 1]`
/// grid, so DFT bin `b` maps to `b (T - 1) / T`.
fn spectrum_atoms(data: &[ImageSignal], len: usize, k: usize, rng: &mut SeededRng) -> Result<(Vec<f64>, Vec<f64>)> {
    if data.is_empty() {
        return Err(Error::InvalidArgument(
            "spectrum initialization needs training data".into(),
        ));
    }
    let half = len / 2;
    // second moments (re^2, im^2, re*im) per bin
    let mut moments = vec![[0.0f64; 3]; half + 1];
    for sig in data {
        if sig.len() != len {
            return Err(Error::Shape(format!(
                "training signal of length {} in a length-{len} dictionary",
                sig.len()
            )));
        }
        let input: Vec<Complex64> = sig.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let spec = dft_any(&input);
        for (b, m) in moments.iter_mut().enumerate() {
            let c = spec[b];
            m[0] += c.re * c.re;
            m[1] += c.im * c.im;
            m[2] += c.re * c.im;
        }
    }
    let mut candidates: Vec<(f64, usize, f64)> = Vec::with_capacity(2 * (half + 1));
    for (b, m) in moments.iter().enumerate() {
        let edge = b == 0 || (len % 2 == 0 && b == half);
        // interior bins appear twice in a real signal
        let weight = if edge { 1.0 } else { 2.0 };
        let (xx, yy, xy) = (m[0], m[1], m[2]);
        let tr = xx + yy;
        let det_part = (((xx - yy) / 2.0).powi(2) + xy * xy).sqrt();
        let l1 = tr / 2.0 + det_part;
        let l2 = (tr / 2.0 - det_part).max(0.0);
        let angle = 0.5 * (2.0 * xy).atan2(xx - yy);
        candidates.push((weight * l1, b, angle));
        if !edge {
            candidates.push((weight * l2, b, angle + PI / 2.0));
        }
    }
    // stable order: energy descending, then bin, then direction
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.total_cmp(&b.2)));
    let mut freqs = Vec::with_capacity(k);
    let mut phases = Vec::with_capacity(k);
    for &(_, b, angle) in candidates.iter().take(k) {
        freqs.push((b as f64 * (len - 1) as f64 / len as f64).max(MIN_FREQUENCY));
        // a cos(w n + angle) = a sin(w n + angle + pi/2)
        phases.push((angle + PI / 2.0).rem_euclid(2.0 * PI));
    }
    while freqs.len() < k {
        // more atoms than candidate directions: fall back to random phases on
        // repeated low bins
        let b = freqs.len() % (half + 1);
        freqs.push((b as f64 * (len - 1) as f64 / len as f64).max(MIN_FREQUENCY));
        phases.push(rng.uniform_in(0.0, 2.0 * PI));
    }
    Ok((freqs, phases))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::make_time_grid;

    #[test]
    fn softplus_values() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(((softplus(40.0) - 40.0) / 40.0).abs() < 1e-15);
        assert!((softplus(-20.0) - 2.061_153_620_314_381e-9).abs() < 1e-20);
        assert!(softplus(800.0).is_finite());
    }

    #[test]
    fn softplus_inverse_round_trip() {
        for &y in &[1e-6, 0.1, 1.0, 5.0, 768.0] {
            assert!((softplus(softplus_inv(y)) - y).abs() <= 1e-12 * y.max(1.0));
        }
        assert!((softplus_inv(1.0) - (std::f64::consts::E - 1.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = ModulationNetwork::zeros(3, 4);
        for &t in &[0.0, 0.3, 1.0] {
            let m = net.modulate(t);
            assert!(m.amplitude.iter().chain(&m.frequency).chain(&m.phase).all(|&v| v == 0.0));
        }
    }

    #[test]
    fn bias_passthrough() {
        let mut net = ModulationNetwork::zeros(2, 3);
        net.input_weights = Array1::from(vec![1.0, -2.0, 0.5]);
        net.output_bias = Array1::from(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        for &t in &[0.0, 0.7] {
            let m = net.modulate(t);
            assert_eq!(m.amplitude, vec![1.0, 2.0]);
            assert_eq!(m.frequency, vec![3.0, 4.0]);
            assert_eq!(m.phase, vec![5.0, 6.0]);
        }
    }

    #[test]
    fn tiny_network_hand_computed() {
        // H=2, K=1
        let mut net = ModulationNetwork::zeros(1, 2);
        net.input_weights = Array1::from(vec![0.5, -1.0]);
        net.input_bias = Array1::from(vec![0.1, 0.2]);
        net.output_weights = Array2::from_shape_vec((3, 2), vec![1.0, 2.0, -1.0, 0.5, 0.0, 3.0]).unwrap();
        net.output_bias = Array1::from(vec![0.01, 0.02, 0.03]);
        let t = 0.4;
        let h0 = (0.5f64 * 0.4 + 0.1).tanh();
        let h1 = (-1.0f64 * 0.4 + 0.2).tanh();
        let m = net.modulate(t);
        assert!((m.amplitude[0] - (h0 + 2.0 * h1 + 0.01)).abs() < 1e-15);
        assert!((m.frequency[0] - (-h0 + 0.5 * h1 + 0.02)).abs() < 1e-15);
        assert!((m.phase[0] - (3.0 * h1 + 0.03)).abs() < 1e-15);
    }

    #[test]
    fn unit_sinusoid() {
        let d = SpectralDictionary::from_effective(&[1.0], &[1.0], &[0.0], 4).unwrap();
        assert!((d.base_amplitude[0] - 0.541_324_854_612_918).abs() < 1e-12);
        let grid = make_time_grid(5).unwrap();
        let s = synthesize_basis(&d, &grid);
        assert!(s.0[[0, 0]].abs() < 1e-15);
        assert!((s.0[[1, 0]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quarter_phase_at_origin() {
        let d = SpectralDictionary::from_effective(&[1.0], &[1.0], &[PI / 2.0], 2).unwrap();
        let grid = make_time_grid(3).unwrap();
        assert!((synthesize_basis(&d, &grid).0[[0, 0]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_modulation_matches_closed_form_at_random_points() {
        let mut rng = SeededRng::new(4);
        let amps: Vec<f64> = (0..5).map(|_| rng.uniform_in(0.1, 2.0)).collect();
        let freqs: Vec<f64> = (0..5).map(|_| rng.uniform_in(0.5, 40.0)).collect();
        let phases: Vec<f64> = (0..5).map(|_| rng.uniform_in(0.0, 6.0)).collect();
        let d = SpectralDictionary::from_effective(&amps, &freqs, &phases, 3).unwrap();
        let grid = make_time_grid(101).unwrap();
        let s = synthesize_basis(&d, &grid);
        for _ in 0..10 {
            let j = rng.below(101) as usize;
            let t = grid.points()[j];
            for i in 0..5 {
                let expect = amps[i] * (2.0 * PI * freqs[i] * t + phases[i]).sin();
                assert!((s.0[[j, i]] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reconstruct_examples() {
        let mut rng = SeededRng::new(2);
        let s = BasisMatrix(Array2::from_shape_fn((4, 3), |_| rng.uniform_in(-1.0, 1.0)));
        let zero = reconstruct(&s, &MixingVector::zeros(3)).unwrap();
        assert!(zero.values.iter().all(|&v| v == 0.0));
        let e1 = reconstruct(&s, &MixingVector(vec![0.0, 1.0, 0.0])).unwrap();
        assert_eq!(e1.values, s.column(1));
        let w = vec![0.3, -1.2, 2.5];
        let got = reconstruct(&s, &MixingVector(w.clone())).unwrap();
        for j in 0..4 {
            let mut acc = 0.0;
            for i in 0..3 {
                acc += w[i] * s.0[[j, i]];
            }
            assert!((got.values[j] - acc).abs() < 1e-14);
        }
        assert!(matches!(reconstruct(&s, &MixingVector::zeros(2)), Err(Error::Shape(_))));
    }

    #[test]
    fn flat_layout_round_trip() {
        let mut rng = SeededRng::new(8);
        let init = DictionaryInit { atoms: 3, hidden: 2, frequency: FrequencyInit::Geometric, ..Default::default() };
        let d = SpectralDictionary::initialize(&init, 16, &[], &mut rng).unwrap();
        let flat = d.to_flat();
        assert_eq!(flat.len(), 3 * 3 + 2 + 2 + 9 * 2 + 9);
        let mut e = SpectralDictionary::from_effective(&[1.0; 3], &[1.0; 3], &[0.0; 3], 2).unwrap();
        e.assign_flat(&flat);
        assert_eq!(d, e);
    }

    #[test]
    fn geometric_frequencies_span_one_to_quarter_length() {
        let mut rng = SeededRng::new(1);
        let init = DictionaryInit { atoms: 8, hidden: 2, frequency: FrequencyInit::Geometric, ..Default::default() };
        let d = SpectralDictionary::initialize(&init, 3072, &[], &mut rng).unwrap();
        let f: Vec<f64> = d.base_frequency.iter().map(|&v| softplus(v)).collect();
        assert!((f[0] - 1.0).abs() < 1e-9);
        assert!((f[7] - 768.0).abs() < 1e-9);
        assert!(f.windows(2).all(|w| w[1] > w[0]));
        assert!(d.base_amplitude.iter().all(|&a| (softplus(a) - 0.1).abs() < 1e-12));
        assert!(d.base_phase.iter().all(|&p| (0.0..2.0 * PI).contains(&p)));
    }

    #[test]
    fn spectrum_init_recovers_a_pure_tone() {
        // x[n] = 0.5 cos(2 pi 5 n / 64 + 0.3)
        let len = 64;
        let x: Vec<f64> = (0..len)
            .map(|n| 0.5 * (2.0 * PI * 5.0 * n as f64 / len as f64 + 0.3).cos())
            .collect();
        let mut rng = SeededRng::new(0);
        let (f, p) = spectrum_atoms(&[ImageSignal::new(x)], len, 1, &mut rng).unwrap();
        assert!((f[0] - 5.0 * 63.0 / 64.0).abs() < 1e-12);
        let p0 = (0.3 + PI / 2.0).rem_euclid(2.0 * PI);
        let diff = (p[0] - p0).rem_euclid(PI);
        // the principal direction is defined up to sign
        assert!(diff < 1e-9 || (PI - diff) < 1e-9, "phase {} vs {}", p[0], p0);
    }

    #[test]
    fn spectrum_init_needs_data() {
        let mut rng = SeededRng::new(0);
        let init = DictionaryInit { atoms: 2, hidden: 2, ..Default::default() };
        assert!(SpectralDictionary::initialize(&init, 16, &[], &mut rng).is_err());
    }
}
