//! Cross-view autoencoder meta-embeddings.
//!
//! Every view `j` gets an encoder `E_j: ℝ^{d_j} → ℝ^d` and a decoder
//! `D_j: ℝ^d → ℝ^{d_j}`. Training minimizes, per sentence,
//!
//! ```text
//! L(x_1 … x_J) = Σ_j Σ_j' l(x_j', D_j'(E_j(x_j)))
//! ```
//!
//! i.e. `J²` reconstruction terms, averaged over each mini-batch and
//! optimized with Adam. The meta-embedding is `Σ_j E_j(x_j)`.
//!
//! Gradients are computed by hand; the networks are small dense stacks with
//! ReLU between layers and a linear output.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embedding::{EmbeddingView, EnsembleBatch};
use crate::error::{MetaError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    Mae,
    /// KL divergence between the softmax of target and reconstruction.
    Kld,
    /// `(1 − cos)²`.
    CosSq,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::Mse, LossKind::Mae, LossKind::Kld, LossKind::CosSq];

    pub fn tag(self) -> u8 {
        match self {
            LossKind::Mse => 0,
            LossKind::Mae => 1,
            LossKind::Kld => 2,
            LossKind::CosSq => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.tag() == tag)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Mse => "mse",
            LossKind::Mae => "mae",
            LossKind::Kld => "kld",
            LossKind::CosSq => "cossq",
        })
    }
}

impl FromStr for LossKind {
    type Err = MetaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(LossKind::Mse),
            "mae" => Ok(LossKind::Mae),
            "kld" | "kl" => Ok(LossKind::Kld),
            "cossq" | "cos" | "1-cos" => Ok(LossKind::CosSq),
            other => Err(MetaError::invalid(format!(
                "unknown loss '{other}' (expected mse, mae, kld or cossq)"
            ))),
        }
    }
}

/// `l(target, recon)` for a single pair of vectors.
pub fn reconstruction_loss(kind: LossKind, target: &[f64], recon: &[f64]) -> Result<f64> {
    if target.len() != recon.len() {
        return Err(MetaError::invalid(format!(
            "loss inputs differ in length: {} vs {}",
            target.len(),
            recon.len()
        )));
    }
    if target.iter().chain(recon).any(|v| !v.is_finite()) {
        return Err(MetaError::Numerical("non-finite loss input".into()));
    }
    let mut grad = vec![0.0; recon.len()];
    Ok(loss_and_grad(kind, target, recon, &mut grad))
}

/// Loss value; writes `∂l/∂recon` into `grad`.
fn loss_and_grad(kind: LossKind, t: &[f64], r: &[f64], grad: &mut [f64]) -> f64 {
    let n = t.len() as f64;
    match kind {
        LossKind::Mse => {
            let mut sum = 0.0;
            for ((g, &ti), &ri) in grad.iter_mut().zip(t).zip(r) {
                let diff = ri - ti;
                sum += diff * diff;
                *g = 2.0 * diff / n;
            }
            sum / n
        }
        LossKind::Mae => {
            let mut sum = 0.0;
            for ((g, &ti), &ri) in grad.iter_mut().zip(t).zip(r) {
                let diff = ri - ti;
                sum += diff.abs();
                *g = if diff > 0.0 {
                    1.0 / n
                } else if diff < 0.0 {
                    -1.0 / n
                } else {
                    0.0
                };
            }
            sum / n
        }
        LossKind::Kld => {
            let lse_t = log_sum_exp(t);
            let lse_r = log_sum_exp(r);
            let mut kl = 0.0;
            for ((g, &ti), &ri) in grad.iter_mut().zip(t).zip(r) {
                let log_p = ti - lse_t;
                let log_q = ri - lse_r;
                let p = log_p.exp();
                kl += p * (log_p - log_q);
                *g = log_q.exp() - p;
            }
            kl
        }
        LossKind::CosSq => {
            let tt: f64 = t.iter().map(|x| x * x).sum();
            let rr: f64 = r.iter().map(|x| x * x).sum();
            let tn = tt.sqrt();
            let rn = rr.sqrt();
            if tn == 0.0 || rn == 0.0 {
                grad.fill(0.0);
                return 1.0;
            }
            let dot: f64 = t.iter().zip(r).map(|(a, b)| a * b).sum();
            let cos = dot / (tn * rn);
            let gap = 1.0 - cos;
            for ((g, &ti), &ri) in grad.iter_mut().zip(t).zip(r) {
                let dcos = ti / (tn * rn) - cos * ri / rr;
                *g = -2.0 * gap * dcos;
            }
            gap * gap
        }
    }
}

fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Dense stack: `ReLU` after every hidden layer, identity after the last.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForwardNet {
    /// `(weight, bias)` with `weight` shaped `out × in`.
    layers: Vec<(DMatrix<f64>, DVector<f64>)>,
}

struct ForwardCache {
    /// Input to each layer (post-activation of the previous one).
    inputs: Vec<DMatrix<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<DMatrix<f64>>,
}

impl FeedForwardNet {
    pub fn from_layers(layers: Vec<(DMatrix<f64>, DVector<f64>)>) -> Result<Self> {
        if layers.is_empty() || layers.len() > 3 {
            return Err(MetaError::invalid(format!(
                "a network has 1 to 3 layers (0 to 2 hidden), got {}",
                layers.len()
            )));
        }
        for (i, (w, b)) in layers.iter().enumerate() {
            if w.nrows() == 0 || w.ncols() == 0 || b.len() != w.nrows() {
                return Err(MetaError::invalid(format!(
                    "layer {i}: weight {}x{} and bias {} are inconsistent",
                    w.nrows(),
                    w.ncols(),
                    b.len()
                )));
            }
            if i > 0 && layers[i - 1].0.nrows() != w.ncols() {
                return Err(MetaError::invalid(format!(
                    "layer {i} expects {} inputs but layer {} emits {}",
                    w.ncols(),
                    i - 1,
                    layers[i - 1].0.nrows()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Seeded `U(−1/√fan_in, 1/√fan_in)` weights, zero biases. Hidden layers
    /// are `width` wide.
    pub fn random(
        input: usize,
        output: usize,
        hidden_count: usize,
        width: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut sizes = vec![input];
        sizes.extend(std::iter::repeat_n(width, hidden_count));
        sizes.push(output);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let weight = DMatrix::from_fn(fan_out, fan_in, |_, _| {
                    rng.random_range(-bound..=bound)
                });
                (weight, DVector::zeros(fan_out))
            })
            .collect();
        Self { layers }
    }

    /// Single linear layer computing the identity.
    pub fn identity(dim: usize) -> Self {
        Self {
            layers: vec![(DMatrix::identity(dim, dim), DVector::zeros(dim))],
        }
    }

    pub fn layers(&self) -> &[(DMatrix<f64>, DVector<f64>)] {
        &self.layers
    }

    pub fn hidden_count(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].0.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].0.nrows()
    }

    fn param_count(&self) -> usize {
        self.layers.iter().map(|(w, b)| w.len() + b.len()).sum()
    }

    /// Rows of `x` are samples.
    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.forward_cached(x).0
    }

    fn forward_cached(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, ForwardCache) {
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len() - 1),
        };
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let mut z = &h * w.transpose();
            for mut row in z.row_iter_mut() {
                row += b.transpose();
            }
            cache.inputs.push(h);
            if i < last {
                let act = z.map(|v| v.max(0.0));
                cache.pre.push(z);
                h = act;
            } else {
                h = z;
            }
        }
        (h, cache)
    }

    /// Accumulates parameter gradients into `grads` (same layout as
    /// `layers`) and returns `∂/∂input`.
    fn backward(
        &self,
        cache: &ForwardCache,
        mut delta: DMatrix<f64>,
        grads: &mut [(DMatrix<f64>, DVector<f64>)],
    ) -> DMatrix<f64> {
        for i in (0..self.layers.len()).rev() {
            if i < self.layers.len() - 1 {
                delta.zip_apply(&cache.pre[i], |d, z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            let (w, _) = &self.layers[i];
            let (gw, gb) = &mut grads[i];
            *gw += delta.tr_mul(&cache.inputs[i]);
            for row in delta.row_iter() {
                *gb += row.transpose();
            }
            delta = &delta * w;
        }
        delta
    }

    fn zero_grads(&self) -> Vec<(DMatrix<f64>, DVector<f64>)> {
        self.layers
            .iter()
            .map(|(w, b)| (DMatrix::zeros(w.nrows(), w.ncols()), DVector::zeros(b.len())))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AeConfig {
    pub d: usize,
    pub loss: LossKind,
    pub hidden_count: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for AeConfig {
    fn default() -> Self {
        Self {
            d: 1024,
            loss: LossKind::Kld,
            hidden_count: 1,
            epochs: 500,
            batch_size: 10_000,
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl AeConfig {
    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(MetaError::InvalidInput(msg));
        if self.d == 0 {
            return bad("autoencoder dimension d must be positive".into());
        }
        if self.hidden_count > 2 {
            return bad(format!("hidden layer count must be 0, 1 or 2, got {}", self.hidden_count));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must be in [0, 1), got {b}"));
            }
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return bad(format!("adam epsilon must be positive, got {}", self.eps));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AeModel {
    pub encoders: Vec<FeedForwardNet>,
    pub decoders: Vec<FeedForwardNet>,
    pub loss: LossKind,
    /// Epoch-mean training loss, one entry per epoch.
    pub train_log: Vec<f64>,
    /// Training configuration, when the model came from [`fit_ae`].
    pub config: Option<AeConfig>,
}

/// Per-parameter gradients laid out like [`AeModel::flat_params`].
type NetGrads = Vec<(DMatrix<f64>, DVector<f64>)>;

impl AeModel {
    pub fn new(
        encoders: Vec<FeedForwardNet>,
        decoders: Vec<FeedForwardNet>,
        loss: LossKind,
    ) -> Result<Self> {
        if encoders.is_empty() || encoders.len() != decoders.len() {
            return Err(MetaError::invalid(format!(
                "need one decoder per encoder, got {} encoders and {} decoders",
                encoders.len(),
                decoders.len()
            )));
        }
        let d = encoders[0].output_dim();
        for (j, (e, dec)) in encoders.iter().zip(&decoders).enumerate() {
            if e.output_dim() != d || dec.input_dim() != d {
                return Err(MetaError::invalid(format!(
                    "view {j}: encoder emits {} and decoder takes {}, shared dim is {d}",
                    e.output_dim(),
                    dec.input_dim()
                )));
            }
            if e.input_dim() != dec.output_dim() {
                return Err(MetaError::invalid(format!(
                    "view {j}: encoder takes {} but decoder emits {}",
                    e.input_dim(),
                    dec.output_dim()
                )));
            }
        }
        Ok(Self {
            encoders,
            decoders,
            loss,
            train_log: Vec::new(),
            config: None,
        })
    }

    pub fn d(&self) -> usize {
        self.encoders[0].output_dim()
    }

    pub fn n_views(&self) -> usize {
        self.encoders.len()
    }

    pub fn view_dims(&self) -> Vec<usize> {
        self.encoders.iter().map(FeedForwardNet::input_dim).collect()
    }

    pub fn hidden_count(&self) -> usize {
        self.encoders[0].hidden_count()
    }

    fn nets(&self) -> impl Iterator<Item = &FeedForwardNet> {
        self.encoders.iter().chain(&self.decoders)
    }

    pub fn param_count(&self) -> usize {
        self.nets().map(FeedForwardNet::param_count).sum()
    }

    /// All parameters: encoders then decoders, each layer's weight
    /// (column-major) followed by its bias.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for net in self.nets() {
            for (w, b) in &net.layers {
                out.extend_from_slice(w.as_slice());
                out.extend_from_slice(b.as_slice());
            }
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(MetaError::invalid(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut pos = 0;
        for net in self.encoders.iter_mut().chain(self.decoders.iter_mut()) {
            for (w, b) in &mut net.layers {
                let nw = w.len();
                w.as_mut_slice().copy_from_slice(&params[pos..pos + nw]);
                pos += nw;
                let nb = b.len();
                b.as_mut_slice().copy_from_slice(&params[pos..pos + nb]);
                pos += nb;
            }
        }
        Ok(())
    }

    fn check_rows(&self, rows: &[DMatrix<f64>]) -> Result<usize> {
        if rows.len() != self.n_views() {
            return Err(MetaError::invalid(format!(
                "expected {} views, got {}",
                self.n_views(),
                rows.len()
            )));
        }
        let n = rows[0].nrows();
        for (j, (x, enc)) in rows.iter().zip(&self.encoders).enumerate() {
            if x.ncols() != enc.input_dim() || x.nrows() != n {
                return Err(MetaError::invalid(format!(
                    "view {j}: got {}x{}, expected {n}x{}",
                    x.nrows(),
                    x.ncols(),
                    enc.input_dim()
                )));
            }
        }
        if n == 0 {
            return Err(MetaError::invalid("empty mini-batch"));
        }
        Ok(n)
    }

    /// The `J²` terms `((j, j'), l(x_j', D_j'(E_j(x_j))))` for one sentence,
    /// given one row per view.
    pub fn loss_terms(&self, batch_rows: &[Vec<f64>]) -> Result<Vec<((usize, usize), f64)>> {
        let rows: Vec<DMatrix<f64>> = batch_rows
            .iter()
            .map(|r| DMatrix::from_row_slice(1, r.len(), r))
            .collect();
        self.check_rows(&rows)?;
        let mut terms = Vec::with_capacity(self.n_views() * self.n_views());
        for (j, enc) in self.encoders.iter().enumerate() {
            let code = enc.forward(&rows[j]);
            for (k, dec) in self.decoders.iter().enumerate() {
                let recon = dec.forward(&code);
                let value = reconstruction_loss(self.loss, &batch_rows[k], recon.as_slice())?;
                terms.push(((j, k), value));
            }
        }
        Ok(terms)
    }

    /// Sum of all `J²` reconstruction terms for one sentence.
    pub fn total_loss(&self, batch_rows: &[Vec<f64>]) -> Result<f64> {
        Ok(self.loss_terms(batch_rows)?.iter().map(|(_, v)| v).sum())
    }

    /// Mini-batch mean of the total loss and its gradient in
    /// [`flat_params`](Self::flat_params) order. `rows[j]` holds the
    /// mini-batch for view `j`, one sample per row.
    pub fn loss_and_gradient(&self, rows: &[DMatrix<f64>]) -> Result<(f64, Vec<f64>)> {
        let (loss, enc_grads, dec_grads) = self.backprop(rows)?;
        let mut flat = Vec::with_capacity(self.param_count());
        for g in enc_grads.iter().chain(&dec_grads) {
            for (w, b) in g {
                flat.extend_from_slice(w.as_slice());
                flat.extend_from_slice(b.as_slice());
            }
        }
        Ok((loss, flat))
    }

    fn backprop(&self, rows: &[DMatrix<f64>]) -> Result<(f64, Vec<NetGrads>, Vec<NetGrads>)> {
        let n = self.check_rows(rows)?;
        let scale = 1.0 / n as f64;
        let mut enc_grads: Vec<NetGrads> = self.encoders.iter().map(|e| e.zero_grads()).collect();
        let mut dec_grads: Vec<NetGrads> = self.decoders.iter().map(|e| e.zero_grads()).collect();
        let mut total = 0.0;
        for (j, enc) in self.encoders.iter().enumerate() {
            let (code, enc_cache) = enc.forward_cached(&rows[j]);
            let mut d_code = DMatrix::zeros(code.nrows(), code.ncols());
            for (k, dec) in self.decoders.iter().enumerate() {
                let (recon, dec_cache) = dec.forward_cached(&code);
                let target = &rows[k];
                let mut d_recon = DMatrix::zeros(recon.nrows(), recon.ncols());
                let mut t = vec![0.0; target.ncols()];
                let mut r = vec![0.0; recon.ncols()];
                let mut g = vec![0.0; recon.ncols()];
                for s in 0..n {
                    t.iter_mut().zip(target.row(s).iter()).for_each(|(a, b)| *a = *b);
                    r.iter_mut().zip(recon.row(s).iter()).for_each(|(a, b)| *a = *b);
                    total += loss_and_grad(self.loss, &t, &r, &mut g);
                    for (c, gv) in g.iter().enumerate() {
                        d_recon[(s, c)] = gv * scale;
                    }
                }
                d_code += dec.backward(&dec_cache, d_recon, &mut dec_grads[k]);
            }
            enc.backward(&enc_cache, d_code, &mut enc_grads[j]);
        }
        Ok((total * scale, enc_grads, dec_grads))
    }

    pub fn apply(&self, batch: &EnsembleBatch) -> Result<EmbeddingView> {
        apply_ae(self, batch)
    }
}

/// Adam over a flat parameter vector.
struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(config: &AeConfig, n_params: usize) -> Self {
        Self {
            lr: config.lr,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.eps,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Builds freshly initialized encoders/decoders for `batch` from `config`.
pub fn init_model(batch: &EnsembleBatch, config: &AeConfig) -> Result<AeModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    init_with_rng(batch, config, &mut rng)
}

fn init_with_rng(batch: &EnsembleBatch, config: &AeConfig, rng: &mut ChaCha8Rng) -> Result<AeModel> {
    let dims = batch.dims();
    let encoders = dims
        .iter()
        .map(|&dj| FeedForwardNet::random(dj, config.d, config.hidden_count, config.d, rng))
        .collect();
    let decoders = dims
        .iter()
        .map(|&dj| FeedForwardNet::random(config.d, dj, config.hidden_count, config.d, rng))
        .collect();
    AeModel::new(encoders, decoders, config.loss)
}

/// Trains the cross-view autoencoder with shuffled mini-batches (the last
/// partial batch is kept). Deterministic given `config.seed`.
pub fn fit_ae(batch: &EnsembleBatch, config: &AeConfig) -> Result<AeModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = init_with_rng(batch, config, &mut rng)?;
    let n = batch.n_sentences();
    let batch_size = config.batch_size.min(n);
    let mut params = model.flat_params();
    let mut adam = Adam::new(config, params.len());
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        for chunk in order.chunks(batch_size) {
            let rows: Vec<DMatrix<f64>> = batch
                .views()
                .iter()
                .map(|v| v.matrix().select_rows(chunk))
                .collect();
            let (loss, grads) = model.loss_and_gradient(&rows)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(MetaError::Diverged { epoch, loss });
            }
            epoch_sum += loss * chunk.len() as f64;
            adam.step(&mut params, &grads);
            model.set_flat_params(&params)?;
        }
        let mean = epoch_sum / n as f64;
        if !mean.is_finite() {
            return Err(MetaError::Diverged { epoch, loss: mean });
        }
        log.push(mean);
    }
    model.train_log = log;
    model.config = Some(config.clone());
    Ok(model)
}

/// Each output row is `Σ_j E_j(x_j)`.
pub fn apply_ae(model: &AeModel, batch: &EnsembleBatch) -> Result<EmbeddingView> {
    batch.check_dims(&model.view_dims())?;
    let mut out = DMatrix::zeros(batch.n_sentences(), model.d());
    for (view, enc) in batch.views().iter().zip(&model.encoders) {
        out += enc.forward(view.matrix());
    }
    EmbeddingView::new("meta:ae", out)
}
