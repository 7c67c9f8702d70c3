use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    elu, elu_grad_from_output, pool_freq, reverse_rows, unpool_freq, Attention, AttentionCache, Conv, ConvCache, Dense,
    Lstm, LstmCache,
};
use super::tensor::{Real, Tensor};
use super::{MtlError, Result};
use crate::scenes::SceneLabel;

/// Which heads are trained and evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskMode {
    Multi,
    SnrOnly,
    AscOnly,
}

impl TaskMode {
    pub const ALL: [TaskMode; 3] = [TaskMode::Multi, TaskMode::SnrOnly, TaskMode::AscOnly];

    pub fn has_snr(self) -> bool {
        matches!(self, TaskMode::Multi | TaskMode::SnrOnly)
    }

    pub fn has_asc(self) -> bool {
        matches!(self, TaskMode::Multi | TaskMode::AscOnly)
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskMode::Multi => "multi",
            TaskMode::SnrOnly => "snr_only",
            TaskMode::AscOnly => "asc_only",
        }
    }
}

impl fmt::Display for TaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskMode {
    type Err = MtlError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "multi" => Ok(TaskMode::Multi),
            "snr" | "snr_only" => Ok(TaskMode::SnrOnly),
            "asc" | "asc_only" => Ok(TaskMode::AscOnly),
            other => Err(MtlError::InvalidConfig(format!("unknown task mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_bins: usize,
    pub conv_blocks: usize,
    pub layers_per_block: usize,
    pub filters: Vec<usize>,
    pub kernel: usize,
    pub bilstm_units: usize,
    pub fc_units: usize,
    pub attention_dim: usize,
    pub asc_classes: usize,
    pub scale_factor: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_bins: 257,
            conv_blocks: 4,
            layers_per_block: 3,
            filters: vec![16, 32, 64, 128],
            kernel: 3,
            bilstm_units: 128,
            fc_units: 128,
            attention_dim: 128,
            asc_classes: SceneLabel::COUNT,
            scale_factor: 1.0,
        }
    }
}

/// Effective layer widths after applying the scale factor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Widths {
    pub filters: Vec<usize>,
    pub lstm: usize,
    pub fc: usize,
    pub attention: usize,
    pub pooled_bins: usize,
}

impl ModelConfig {
    /// Paper-sized widths shrunk by `scale_factor`.
    pub fn desk() -> Self {
        Self { scale_factor: 0.25, ..Self::default() }
    }

    /// Minimal network for finite-difference gradient checks.
    pub fn tiny() -> Self {
        Self {
            n_bins: 9,
            filters: vec![2, 2, 2, 2],
            bilstm_units: 3,
            fc_units: 4,
            attention_dim: 3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(MtlError::InvalidConfig(m.to_string()));
        if self.n_bins == 0 {
            return bad("n_bins must be positive");
        }
        if self.conv_blocks == 0 || self.layers_per_block == 0 {
            return bad("conv_blocks and layers_per_block must be positive");
        }
        if self.filters.len() != self.conv_blocks {
            return bad("filters must list one width per conv block");
        }
        if self.kernel != 3 {
            return bad("only 3x3 kernels are supported");
        }
        if !(self.scale_factor > 0.0 && self.scale_factor <= 1.0) {
            return bad("scale_factor must lie in (0, 1]");
        }
        if self.asc_classes != SceneLabel::COUNT {
            return bad("asc_classes must equal the number of scene labels");
        }
        if self.filters.iter().chain([&self.bilstm_units, &self.fc_units, &self.attention_dim]).any(|&w| w == 0) {
            return bad("widths must be positive");
        }
        Ok(())
    }

    fn scaled(&self, w: usize) -> usize {
        ((w as f64 * self.scale_factor).round() as usize).max(1)
    }

    pub fn widths(&self) -> Widths {
        let mut bins = self.n_bins;
        for _ in 0..self.conv_blocks {
            bins = bins.div_ceil(2);
        }
        Widths {
            filters: self.filters.iter().map(|&f| self.scaled(f)).collect(),
            lstm: self.scaled(self.bilstm_units),
            fc: self.scaled(self.fc_units),
            attention: self.scaled(self.attention_dim),
            pooled_bins: bins,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Branch<T> {
    pub attention: Attention<T>,
    pub head: Dense<T>,
}

impl<T: Real> Branch<T> {
    fn zeros_like(&self) -> Self {
        Self { attention: self.attention.zeros_like(), head: self.head.zeros_like() }
    }
}

/// The multi-task network: shared conv + BiLSTM + FC encoder and one
/// attention branch per active task.
#[derive(Debug, Clone)]
pub struct Network<T> {
    pub config: ModelConfig,
    pub mode: TaskMode,
    pub convs: Vec<Conv<T>>,
    pub lstm_fwd: Lstm<T>,
    pub lstm_bwd: Lstm<T>,
    pub fc: Dense<T>,
    pub snr: Option<Branch<T>>,
    pub asc: Option<Branch<T>>,
}

/// Raw head outputs for one utterance.
#[derive(Debug, Clone)]
pub struct Outputs<T> {
    pub frames: Option<Vec<T>>,
    pub snr_hat: Option<T>,
    pub logits: Option<Vec<T>>,
    pub probs: Option<Vec<T>>,
}

enum Stage<T> {
    Conv(ConvCache<T>),
    Pool { arg: Vec<u32>, input_len: usize, out: Vec<T> },
}

struct BranchCache<T> {
    att: AttentionCache<T>,
}

/// Everything needed to run the backward pass for one utterance.
pub struct Cache<T> {
    steps: usize,
    stages: Vec<(Stage<T>, usize, usize)>,
    fwd: LstmCache<T>,
    bwd: LstmCache<T>,
    seq: Vec<T>,
    fc_out: Vec<T>,
    snr: Option<BranchCache<T>>,
    asc: Option<BranchCache<T>>,
}

impl<T> Cache<T> {
    pub fn encoder_output(&self) -> &[T] {
        &self.fc_out
    }

    pub fn snr_attention(&self) -> Option<&[T]> {
        self.snr.as_ref().map(|b| b.att.output())
    }

    pub fn asc_attention(&self) -> Option<&[T]> {
        self.asc.as_ref().map(|b| b.att.output())
    }
}

/// Loss gradients with respect to the raw head outputs.
pub struct OutputGrads<T> {
    pub frames: Option<Vec<T>>,
    pub logits: Option<Vec<T>>,
}

pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let mx = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = logits.iter().map(|v| (*v - mx).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Per-term breakdown of the training objective.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub utterance_mse: f64,
    pub frame_mse: f64,
    pub cross_entropy: f64,
    pub total: f64,
}

/// Utterance MSE + mean frame MSE + `lambda` times cross-entropy, restricted
/// to the heads present in `mode`. Returns the terms and output gradients
/// scaled by `weight`.
pub fn loss_and_grads<T: Real>(
    out: &Outputs<T>,
    mode: TaskMode,
    target_snr: f64,
    target_scene: usize,
    lambda: f64,
    weight: T,
) -> (LossTerms, OutputGrads<T>) {
    let mut terms = LossTerms::default();
    let mut grads = OutputGrads { frames: None, logits: None };
    if mode.has_snr() {
        let frames = out.frames.as_ref().expect("snr head");
        let n = T::lit(frames.len() as f64);
        let y = T::lit(target_snr);
        let hat = frames.iter().copied().sum::<T>() / n;
        let e_utt = hat - y;
        terms.utterance_mse = (e_utt * e_utt).as_f64();
        let mut frame_sq = T::zero();
        let two = T::lit(2.0);
        let g: Vec<T> = frames
            .iter()
            .map(|f| {
                let e = *f - y;
                frame_sq += e * e;
                weight * two * (e_utt + e) / n
            })
            .collect();
        terms.frame_mse = (frame_sq / n).as_f64();
        grads.frames = Some(g);
    }
    if mode.has_asc() {
        let probs = out.probs.as_ref().expect("asc head");
        let p = probs[target_scene].max(T::min_positive_value());
        terms.cross_entropy = -p.ln().as_f64();
        let lam = T::lit(lambda);
        let scale = if mode == TaskMode::Multi { lam } else { T::one() };
        let g: Vec<T> = probs
            .iter()
            .enumerate()
            .map(|(k, pk)| weight * scale * (*pk - if k == target_scene { T::one() } else { T::zero() }))
            .collect();
        grads.logits = Some(g);
    }
    let ce_weight = if mode == TaskMode::Multi { lambda } else { 1.0 };
    terms.total = terms.utterance_mse + terms.frame_mse + ce_weight * terms.cross_entropy;
    (terms, grads)
}

impl<T: Real> Network<T> {
    pub fn new(config: ModelConfig, mode: TaskMode, seed: u64) -> Result<Self> {
        config.validate()?;
        let w = config.widths();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut convs = Vec::new();
        let mut c_in = 1;
        for &c_out in &w.filters {
            for _ in 0..config.layers_per_block {
                convs.push(Conv::new(&mut rng, c_in, c_out));
                c_in = c_out;
            }
        }
        let seq_dim = c_in * w.pooled_bins;
        let lstm_fwd = Lstm::new(&mut rng, seq_dim, w.lstm);
        let lstm_bwd = Lstm::new(&mut rng, seq_dim, w.lstm);
        let fc = Dense::new(&mut rng, 2 * w.lstm, w.fc);
        let mut branch = |n_out: usize| Branch {
            attention: Attention::new(&mut rng, w.fc, w.attention),
            head: Dense::new(&mut rng, w.fc, n_out),
        };
        let snr = Some(branch(1)).filter(|_| mode.has_snr());
        let asc = Some(branch(config.asc_classes)).filter(|_| mode.has_asc());
        Ok(Self { config, mode, convs, lstm_fwd, lstm_bwd, fc, snr, asc })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            mode: self.mode,
            convs: self.convs.iter().map(Conv::zeros_like).collect(),
            lstm_fwd: self.lstm_fwd.zeros_like(),
            lstm_bwd: self.lstm_bwd.zeros_like(),
            fc: self.fc.zeros_like(),
            snr: self.snr.as_ref().map(Branch::zeros_like),
            asc: self.asc.as_ref().map(Branch::zeros_like),
        }
    }

    /// Named parameters in a fixed order shared with [`Network::params_mut`].
    pub fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            let (b, l) = (i / self.config.layers_per_block, i % self.config.layers_per_block);
            out.extend(c.tensors().map(|(n, t)| (format!("encoder.block{b}.conv{l}.{n}"), t)));
        }
        out.extend(self.lstm_fwd.tensors().map(|(n, t)| (format!("encoder.lstm_fwd.{n}"), t)));
        out.extend(self.lstm_bwd.tensors().map(|(n, t)| (format!("encoder.lstm_bwd.{n}"), t)));
        out.extend(self.fc.tensors().map(|(n, t)| (format!("encoder.fc.{n}"), t)));
        for (tag, br) in [("snr", &self.snr), ("asc", &self.asc)] {
            if let Some(br) = br {
                out.extend(br.attention.tensors().map(|(n, t)| (format!("{tag}.attention.{n}"), t)));
                out.extend(br.head.tensors().map(|(n, t)| (format!("{tag}.head.{n}"), t)));
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for c in &mut self.convs {
            out.extend(c.tensors_mut());
        }
        out.extend(self.lstm_fwd.tensors_mut());
        out.extend(self.lstm_bwd.tensors_mut());
        out.extend(self.fc.tensors_mut());
        for br in [&mut self.snr, &mut self.asc].into_iter().flatten() {
            out.extend(br.attention.tensors_mut());
            out.extend(br.head.tensors_mut());
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|(_, t)| t.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        let mut out = Network::<U>::new(self.config.clone(), self.mode, 0).expect("validated config");
        for (dst, (_, src)) in out.params_mut().into_iter().zip(self.params()) {
            *dst = src.cast();
        }
        out
    }

    /// Runs the network on a `steps x n_bins` feature matrix.
    pub fn forward(&self, features: &[T], steps: usize) -> Result<(Outputs<T>, Cache<T>)> {
        let f0 = self.config.n_bins;
        if steps == 0 || features.len() != steps * f0 {
            return Err(MtlError::ShapeMismatch { expected: f0, got: if steps == 0 { 0 } else { features.len() / steps } });
        }
        let lpb = self.config.layers_per_block;
        let mut stages = Vec::with_capacity(self.convs.len() + self.config.conv_blocks);
        let mut f = f0;
        for (i, conv) in self.convs.iter().enumerate() {
            let input: &[T] = match stages.last() {
                None => features,
                Some((Stage::Conv(c), _, _)) => c.output(),
                Some((Stage::Pool { out, .. }, _, _)) => out,
            };
            let cache = conv.forward(input, steps, f);
            let c = conv.c_out();
            let pooled = ((i + 1) % lpb == 0).then(|| pool_freq(cache.output(), steps, f, c));
            stages.push((Stage::Conv(cache), f, c));
            if let Some((out, arg)) = pooled {
                let input_len = steps * f * c;
                f = f.div_ceil(2);
                stages.push((Stage::Pool { arg, input_len, out }, f, c));
            }
        }
        let x = match stages.last() {
            Some((Stage::Pool { out, .. }, _, _)) => out.clone(),
            _ => unreachable!("every block ends with a pooling stage"),
        };
        let seq_dim = self.lstm_fwd.n_in();
        debug_assert_eq!(x.len(), steps * seq_dim);
        let seq = x;
        let fwd = self.lstm_fwd.forward(seq.clone(), steps);
        let bwd = self.lstm_bwd.forward(reverse_rows(&seq, seq_dim), steps);
        let h = self.lstm_fwd.units();
        let bwd_h = reverse_rows(bwd.hidden(), h);
        let mut cat = Vec::with_capacity(steps * 2 * h);
        for s in 0..steps {
            cat.extend_from_slice(&fwd.hidden()[s * h..(s + 1) * h]);
            cat.extend_from_slice(&bwd_h[s * h..(s + 1) * h]);
        }
        let mut fc_out = self.fc.forward(&cat, steps);
        fc_out.iter_mut().for_each(|v| *v = elu(*v));

        let (outputs, snr, asc) = self.run_heads(&fc_out, steps);
        let cache = Cache { steps, stages, fwd, bwd, seq: cat, fc_out, snr, asc };
        Ok((outputs, cache))
    }

    /// Runs only the task branches on an encoder output of shape
    /// `steps x fc_units`.
    pub fn forward_heads(&self, encoded: &[T], steps: usize) -> Outputs<T> {
        self.run_heads(encoded, steps).0
    }

    #[allow(clippy::type_complexity)]
    fn run_heads(&self, fc_out: &[T], steps: usize) -> (Outputs<T>, Option<BranchCache<T>>, Option<BranchCache<T>>) {
        let mut outputs = Outputs { frames: None, snr_hat: None, logits: None, probs: None };
        let snr = self.snr.as_ref().map(|br| {
            let att = br.attention.forward(fc_out.to_vec(), steps);
            let frames = br.head.forward(att.output(), steps);
            outputs.snr_hat = Some(frames.iter().copied().sum::<T>() / T::lit(steps as f64));
            outputs.frames = Some(frames);
            BranchCache { att }
        });
        let asc = self.asc.as_ref().map(|br| {
            let att = br.attention.forward(fc_out.to_vec(), steps);
            let pooled = mean_rows(att.output(), steps);
            let logits = br.head.forward(&pooled, 1);
            outputs.probs = Some(softmax(&logits));
            outputs.logits = Some(logits);
            BranchCache { att }
        });
        (outputs, snr, asc)
    }

    /// Accumulates parameter gradients for one utterance into `grad`.
    pub fn backward(&self, cache: &Cache<T>, out_grads: &OutputGrads<T>, grad: &mut Network<T>) {
        let steps = cache.steps;
        let dm = self.fc.n_out();
        let mut d_enc = vec![T::zero(); steps * dm];
        if let (Some(br), Some(bc), Some(df)) = (&self.snr, &cache.snr, &out_grads.frames) {
            let g = grad.snr.as_mut().expect("matching modes");
            let d_att = br.head.backward(bc.att.output(), df, steps, &mut g.head);
            let dx = br.attention.backward(&bc.att, &d_att, &mut g.attention);
            add_into(&mut d_enc, &dx);
        }
        if let (Some(br), Some(bc), Some(dl)) = (&self.asc, &cache.asc, &out_grads.logits) {
            let g = grad.asc.as_mut().expect("matching modes");
            let pooled = mean_rows(bc.att.output(), steps);
            let d_pooled = br.head.backward(&pooled, dl, 1, &mut g.head);
            let inv = T::one() / T::lit(steps as f64);
            let d_att: Vec<T> = (0..steps).flat_map(|_| d_pooled.iter().map(move |v| *v * inv)).collect();
            let dx = br.attention.backward(&bc.att, &d_att, &mut g.attention);
            add_into(&mut d_enc, &dx);
        }
        for (d, y) in d_enc.iter_mut().zip(&cache.fc_out) {
            *d *= elu_grad_from_output(*y);
        }
        let d_cat = self.fc.backward(&cache.seq, &d_enc, steps, &mut grad.fc);
        let h = self.lstm_fwd.units();
        let mut dh_f = Vec::with_capacity(steps * h);
        let mut dh_b = Vec::with_capacity(steps * h);
        for row in d_cat.chunks_exact(2 * h) {
            dh_f.extend_from_slice(&row[..h]);
            dh_b.extend_from_slice(&row[h..]);
        }
        let seq_dim = self.lstm_fwd.n_in();
        let mut dx = self.lstm_fwd.backward(&cache.fwd, &dh_f, &mut grad.lstm_fwd);
        let dx_b = self.lstm_bwd.backward(&cache.bwd, &reverse_rows(&dh_b, h), &mut grad.lstm_bwd);
        add_into(&mut dx, &reverse_rows(&dx_b, seq_dim));

        let mut conv_idx = self.convs.len();
        let mut dy = dx;
        for (stage, f_out, _) in cache.stages.iter().rev() {
            match stage {
                Stage::Pool { arg, input_len, .. } => {
                    dy = unpool_freq(&dy, arg, *input_len);
                }
                Stage::Conv(cc) => {
                    conv_idx -= 1;
                    let need_dx = conv_idx > 0;
                    let conv = &self.convs[conv_idx];
                    match conv.backward(cc, dy, steps, *f_out, &mut grad.convs[conv_idx], need_dx) {
                        Some(d) => dy = d,
                        None => break,
                    }
                }
            }
        }
    }

    pub fn fill_zero(&mut self) {
        self.params_mut().into_iter().for_each(Tensor::fill_zero);
    }
}

fn mean_rows<T: Real>(x: &[T], rows: usize) -> Vec<T> {
    let width = x.len() / rows;
    let mut acc = vec![T::zero(); width];
    for row in x.chunks_exact(width) {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += *v;
        }
    }
    let inv = T::one() / T::lit(rows as f64);
    acc.iter_mut().for_each(|v| *v *= inv);
    acc
}

fn add_into<T: Real>(acc: &mut [T], x: &[T]) {
    for (a, v) in acc.iter_mut().zip(x) {
        *a += *v;
    }
}
