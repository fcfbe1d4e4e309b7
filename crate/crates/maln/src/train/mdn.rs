//! Tiny mix-density network: a per-token embedding through a ReLU MLP whose
//! final affine layer emits `2d` values per token — `d` means followed by `d`
//! log-variances. Gradients are exact manual reverse mode.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::emission::GaussianSequence;
use crate::error::{MalnError, Result};
use crate::tensor::Tensor;

/// Network sizes and init. `hidden_layers` may be zero, in which case the
/// embedding feeds the output affine directly.
///
/// `init_log_var` biases the log-variance outputs at init. Starting wider
/// than the data keeps the lattice posteriors soft while the means sort
/// themselves onto their clusters; variances tighten afterwards on their own.
#[derive(Debug, Clone)]
pub struct MdnConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub hidden_layers: usize,
    pub init_log_var: f64,
}

impl Default for MdnConfig {
    fn default() -> Self {
        MdnConfig { embed_dim: 8, hidden_dim: 16, hidden_layers: 1, init_log_var: 4.0f64.ln() }
    }
}

/// One affine map `y = W x + b` with `W` shaped `(out, in)`.
#[derive(Debug, Clone)]
pub struct Affine {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Affine {
    pub fn zeros(out: usize, input: usize) -> Self {
        Affine {
            weight: Tensor::zeros(vec![out, input]).unwrap(),
            bias: Tensor::zeros(vec![out]).unwrap(),
        }
    }

    /// He-style init: `W ~ N(0, 2/fan_in)`, zero bias.
    pub fn he_init<R: Rng>(out: usize, input: usize, rng: &mut R) -> Self {
        Affine::scaled_init(out, input, (2.0 / input as f64).sqrt(), rng)
    }

    /// `W ~ N(0, std^2)`, zero bias.
    pub fn scaled_init<R: Rng>(out: usize, input: usize, std: f64, rng: &mut R) -> Self {
        let data = (0..out * input).map(|_| rng.sample::<f64, _>(StandardNormal) * std).collect();
        Affine {
            weight: Tensor::new(vec![out, input], data).unwrap(),
            bias: Tensor::zeros(vec![out]).unwrap(),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn in_dim(&self) -> usize {
        self.weight.dim(1)
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.bias.data().to_vec();
        for (r, o) in out.iter_mut().enumerate() {
            let row = self.weight.row(r);
            for (w, v) in row.iter().zip(x) {
                *o += w * v;
            }
        }
        out
    }
}

/// Mix-density network parameters: embedding table plus affine stack.
#[derive(Debug, Clone)]
pub struct MdnParams {
    pub config: MdnConfig,
    pub feature_dim: usize,
    pub embed: Tensor,
    pub layers: Vec<Affine>,
}

impl MdnParams {
    /// Random init: unit-normal embeddings, He-initialized affine layers,
    /// zero biases (so log-variances start near zero).
    pub fn init<R: Rng>(
        config: MdnConfig,
        token_count: usize,
        feature_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if token_count == 0 || feature_dim == 0 || config.embed_dim == 0 {
            return Err(MalnError::Config("token count, feature dim, and embed dim must be positive".into()));
        }
        if config.hidden_layers > 0 && config.hidden_dim == 0 {
            return Err(MalnError::Config("hidden dim must be positive".into()));
        }
        let embed_data: Vec<f64> = (0..token_count * config.embed_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let embed = Tensor::new(vec![token_count, config.embed_dim], embed_data)?;

        let mut layers = Vec::with_capacity(config.hidden_layers + 1);
        let mut width = config.embed_dim;
        for _ in 0..config.hidden_layers {
            layers.push(Affine::he_init(config.hidden_dim, width, rng));
            width = config.hidden_dim;
        }
        // the output layer starts near zero so every token begins as an
        // (almost) identical wide Gaussian at the origin and the lattice
        // posterior, not the init, decides which token claims which frames
        let mut output = Affine::scaled_init(2 * feature_dim, width, 0.01, rng);
        if !config.init_log_var.is_finite() {
            return Err(MalnError::Config("init_log_var must be finite".into()));
        }
        for b in &mut output.bias.data_mut()[feature_dim..] {
            *b = config.init_log_var;
        }
        layers.push(output);

        Ok(MdnParams { config, feature_dim, embed, layers })
    }

    pub fn token_count(&self) -> usize {
        self.embed.dim(0)
    }

    /// Parameter groups in a fixed order: embedding, then each layer's weight
    /// and bias. Gradients from [`mdn_backward`] use the same order.
    pub fn flat(&self) -> Vec<&[f64]> {
        let mut out = vec![self.embed.data()];
        for l in &self.layers {
            out.push(l.weight.data());
            out.push(l.bias.data());
        }
        out
    }

    pub fn flat_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![self.embed.data_mut()];
        for l in &mut self.layers {
            out.push(l.weight.data_mut());
            out.push(l.bias.data_mut());
        }
        out
    }

    pub fn group_lens(&self) -> Vec<usize> {
        self.flat().iter().map(|s| s.len()).collect()
    }

    // Forward pass for one token, recording every affine input.
    fn run(&self, id: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut x = self.embed.row(id).to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            inputs.push(x.clone());
            let mut y = layer.apply(&x);
            if i + 1 < self.layers.len() {
                for v in &mut y {
                    *v = v.max(0.0);
                }
            }
            x = y;
        }
        (inputs, x)
    }
}

/// Gradients matching [`MdnParams`] group for group.
#[derive(Debug, Clone)]
pub struct MdnGrads {
    pub embed: Tensor,
    pub layers: Vec<Affine>,
}

impl MdnGrads {
    fn zeros_like(params: &MdnParams) -> Self {
        MdnGrads {
            embed: Tensor::zeros(params.embed.dims().to_vec()).unwrap(),
            layers: params.layers.iter().map(|l| Affine::zeros(l.out_dim(), l.in_dim())).collect(),
        }
    }

    pub fn flat(&self) -> Vec<&[f64]> {
        let mut out = vec![self.embed.data()];
        for l in &self.layers {
            out.push(l.weight.data());
            out.push(l.bias.data());
        }
        out
    }
}

fn check_ids(params: &MdnParams, token_ids: &[usize]) -> Result<()> {
    if token_ids.is_empty() {
        return Err(MalnError::InvalidInput("no token ids".into()));
    }
    if let Some(&bad) = token_ids.iter().find(|&&id| id >= params.token_count()) {
        return Err(MalnError::InvalidInput(format!(
            "token id {bad} out of range ({} embeddings)",
            params.token_count()
        )));
    }
    Ok(())
}

/// Emit the Gaussian parameters for a token sequence: embedding lookup, the
/// ReLU stack, then the final affine split into means and log-variances.
pub fn mdn_forward(params: &MdnParams, token_ids: &[usize]) -> Result<GaussianSequence> {
    check_ids(params, token_ids)?;
    let d = params.feature_dim;
    let mut means = Vec::with_capacity(token_ids.len() * d);
    let mut log_vars = Vec::with_capacity(token_ids.len() * d);
    for &id in token_ids {
        let (_, out) = params.run(id);
        means.extend_from_slice(&out[..d]);
        log_vars.extend_from_slice(&out[d..]);
    }
    GaussianSequence::new(
        Tensor::new(vec![token_ids.len(), d], means)?,
        Tensor::new(vec![token_ids.len(), d], log_vars)?,
    )
}

/// Exact reverse-mode gradients of the network parameters given upstream
/// gradients on the emitted means and log-variances (both `(len(ids), d)`).
pub fn mdn_backward(
    params: &MdnParams,
    token_ids: &[usize],
    d_means: &Tensor,
    d_log_vars: &Tensor,
) -> Result<MdnGrads> {
    check_ids(params, token_ids)?;
    let d = params.feature_dim;
    let expected = [token_ids.len(), d];
    if d_means.dims() != expected || d_log_vars.dims() != expected {
        return Err(MalnError::Shape(format!(
            "upstream gradients must be {:?}, got {:?} and {:?}",
            expected,
            d_means.dims(),
            d_log_vars.dims()
        )));
    }

    let mut grads = MdnGrads::zeros_like(params);
    for (pos, &id) in token_ids.iter().enumerate() {
        let (inputs, _) = params.run(id);

        let mut upstream: Vec<f64> = Vec::with_capacity(2 * d);
        upstream.extend_from_slice(d_means.row(pos));
        upstream.extend_from_slice(d_log_vars.row(pos));

        for (i, layer) in params.layers.iter().enumerate().rev() {
            let input = &inputs[i];
            // hidden layers pass through ReLU, so their upstream gradient is
            // masked by the sign of the pre-activation
            if i + 1 < params.layers.len() {
                let pre = layer.apply(input);
                for (u, p) in upstream.iter_mut().zip(&pre) {
                    if *p <= 0.0 {
                        *u = 0.0;
                    }
                }
            }

            let g = &mut grads.layers[i];
            let mut downstream = vec![0.0; layer.in_dim()];
            for r in 0..layer.out_dim() {
                let u = upstream[r];
                g.bias.data_mut()[r] += u;
                let w_row = layer.weight.row(r);
                let g_row = &mut g.weight.data_mut()[r * layer.in_dim()..(r + 1) * layer.in_dim()];
                for c in 0..layer.in_dim() {
                    g_row[c] += u * input[c];
                    downstream[c] += u * w_row[c];
                }
            }
            upstream = downstream;
        }

        let e = params.config.embed_dim;
        let g_row = &mut grads.embed.data_mut()[id * e..(id + 1) * e];
        for (g, u) in g_row.iter_mut().zip(&upstream) {
            *g += u;
        }
    }
    Ok(grads)
}
