//! Small dense-network engine: forward pass, exact backward pass, adaptive
//! moment updates, target-network mixing and an optional dueling head.
//!
//! Parameters live in one flat vector (per layer: weights stored input-major,
//! then biases) so optimizer and target updates are plain element-wise loops.

mod checkpoint;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    #[inline]
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
}

/// Layer layout of a network. With `dueling` set, the last layer must be an
/// identity layer of width `1 + n_actions` (value then advantages) and the
/// network outputs the combined Q-values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input: usize,
    pub layers: Vec<LayerSpec>,
    pub dueling: bool,
}

impl NetSpec {
    /// `input -> hidden... (ReLU) -> output (out_act)`.
    pub fn mlp(input: usize, hidden: &[usize], output: usize, out_act: Activation) -> Self {
        let mut layers: Vec<LayerSpec> = hidden
            .iter()
            .map(|&w| LayerSpec {
                width: w,
                activation: Activation::Relu,
            })
            .collect();
        layers.push(LayerSpec {
            width: output,
            activation: out_act,
        });
        NetSpec {
            input,
            layers,
            dueling: false,
        }
    }

    /// Hidden ReLU layers feeding a dueling value/advantage head.
    pub fn dueling(input: usize, hidden: &[usize], n_actions: usize) -> Self {
        let mut spec = NetSpec::mlp(input, hidden, 1 + n_actions, Activation::Identity);
        spec.dueling = true;
        spec
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 {
            return Err(Error::Config("network input width must be positive".into()));
        }
        if self.layers.len() < 2 {
            return Err(Error::Config("network needs at least one hidden layer".into()));
        }
        if self.layers.iter().any(|l| l.width == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if self.dueling {
            let last = self.layers.last().expect("checked above");
            if last.width < 2 || last.activation != Activation::Identity {
                return Err(Error::Config(
                    "dueling head needs an identity output of width 1 + actions".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn output(&self) -> usize {
        let last = self.layers.last().map_or(0, |l| l.width);
        if self.dueling {
            last - 1
        } else {
            last
        }
    }

    fn fan_in(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input
        } else {
            self.layers[layer - 1].width
        }
    }

    /// `(weight offset, bias offset)` per layer and total parameter count.
    fn offsets(&self) -> (Vec<(usize, usize)>, usize) {
        let mut at = 0;
        let offs = (0..self.layers.len())
            .map(|l| {
                let w = at;
                at += self.fan_in(l) * self.layers[l].width;
                let b = at;
                at += self.layers[l].width;
                (w, b)
            })
            .collect();
        (offs, at)
    }

    pub fn param_count(&self) -> usize {
        self.offsets().1
    }
}

/// Network parameters together with their layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub spec: NetSpec,
    pub seed: u64,
    pub values: Vec<f64>,
    offsets: Vec<(usize, usize)>,
}

/// Activations recorded by a forward pass, consumed by [`Params::backward`].
#[derive(Debug, Clone, Default)]
pub struct Cache {
    /// `inputs[l]` is the input of layer `l`; the last entry is the raw output.
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl Cache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

impl Params {
    /// Uniform initialization in `±1/sqrt(fan_in)`.
    pub fn init(spec: NetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let (offsets, total) = spec.offsets();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![0.0; total];
        for (l, &(w, _)) in offsets.iter().enumerate() {
            let bound = 1.0 / (spec.fan_in(l) as f64).sqrt();
            let end = w + (spec.fan_in(l) + 1) * spec.layers[l].width;
            for v in &mut values[w..end] {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(Params {
            spec,
            seed,
            values,
            offsets,
        })
    }

    pub fn zeros(spec: NetSpec) -> Result<Self> {
        spec.validate()?;
        let (offsets, total) = spec.offsets();
        Ok(Params {
            spec,
            seed: 0,
            values: vec![0.0; total],
            offsets,
        })
    }

    /// Rebuilds a parameter set from a flat vector.
    pub fn from_values(spec: NetSpec, seed: u64, values: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        let (offsets, total) = spec.offsets();
        contract!(
            values.len() == total,
            "expected {total} parameters, got {}",
            values.len()
        );
        contract!(values.iter().all(|v| v.is_finite()), "non-finite parameter");
        Ok(Params {
            spec,
            seed,
            values,
            offsets,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn input_len(&self) -> usize {
        self.spec.input
    }

    pub fn output_len(&self) -> usize {
        self.spec.output()
    }

    /// Weight from input unit `i` to output unit `o` of layer `l`.
    pub fn weight(&self, l: usize, o: usize, i: usize) -> f64 {
        let width = self.spec.layers[l].width;
        self.values[self.offsets[l].0 + i * width + o]
    }

    pub fn bias(&self, l: usize, o: usize) -> f64 {
        self.values[self.offsets[l].1 + o]
    }

    pub fn zero_grads(&self) -> Vec<f64> {
        vec![0.0; self.values.len()]
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut cache = Cache::default();
        self.forward_cached(input, &mut cache)?;
        Ok(cache.output)
    }

    /// Forward pass that keeps what the backward pass needs.
    pub fn forward_cached<'c>(&self, input: &[f64], cache: &'c mut Cache) -> Result<&'c [f64]> {
        contract!(
            input.len() == self.spec.input,
            "input has {} features, network expects {}",
            input.len(),
            self.spec.input
        );
        let n = self.spec.layers.len();
        cache.inputs.resize(n + 1, Vec::new());
        cache.pre.resize(n, Vec::new());
        cache.inputs[0].clear();
        cache.inputs[0].extend_from_slice(input);
        for (l, layer) in self.spec.layers.iter().enumerate() {
            let width = layer.width;
            let (w_off, b_off) = self.offsets[l];
            let (head, tail) = cache.inputs.split_at_mut(l + 1);
            let x = &head[l];
            let pre = &mut cache.pre[l];
            pre.clear();
            pre.extend_from_slice(&self.values[b_off..b_off + width]);
            for (i, &xi) in x.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let row = &self.values[w_off + i * width..w_off + (i + 1) * width];
                for (p, w) in pre.iter_mut().zip(row) {
                    *p += w * xi;
                }
            }
            let y = &mut tail[0];
            y.clear();
            y.extend(pre.iter().map(|&p| layer.activation.apply(p)));
        }
        let raw = &cache.inputs[n];
        cache.output.clear();
        if self.spec.dueling {
            cache.output.extend(dueling_combine(raw[0], &raw[1..]));
        } else {
            cache.output.extend_from_slice(raw);
        }
        Ok(&cache.output)
    }

    /// Accumulates `d(loss)/d(params)` into `grads` given `d(loss)/d(output)`
    /// and returns `d(loss)/d(input)`.
    pub fn backward(&self, cache: &Cache, out_grad: &[f64], grads: &mut [f64]) -> Result<Vec<f64>> {
        contract!(grads.len() == self.values.len(), "gradient buffer has wrong length");
        self.backprop(cache, out_grad, Some(grads))
    }

    /// `d(loss)/d(input)` only; parameter gradients are not formed.
    pub fn backward_input(&self, cache: &Cache, out_grad: &[f64]) -> Result<Vec<f64>> {
        self.backprop(cache, out_grad, None)
    }

    fn backprop(&self, cache: &Cache, out_grad: &[f64], mut grads: Option<&mut [f64]>) -> Result<Vec<f64>> {
        contract!(
            out_grad.len() == self.spec.output(),
            "output gradient has {} entries, network outputs {}",
            out_grad.len(),
            self.spec.output()
        );
        contract!(
            cache.pre.len() == self.spec.layers.len(),
            "cache does not come from this network"
        );
        let mut dy: Vec<f64> = if self.spec.dueling {
            let k = out_grad.len() as f64;
            let total: f64 = out_grad.iter().sum();
            std::iter::once(total)
                .chain(out_grad.iter().map(|g| g - total / k))
                .collect()
        } else {
            out_grad.to_vec()
        };
        for l in (0..self.spec.layers.len()).rev() {
            let layer = self.spec.layers[l];
            let width = layer.width;
            let (w_off, b_off) = self.offsets[l];
            let x = &cache.inputs[l];
            let y = &cache.inputs[l + 1];
            let pre = &cache.pre[l];
            let dpre: Vec<f64> = dy
                .iter()
                .zip(pre.iter().zip(y))
                .map(|(g, (&p, &o))| g * layer.activation.derivative(p, o))
                .collect();
            if let Some(g) = grads.as_deref_mut() {
                for (gb, d) in g[b_off..b_off + width].iter_mut().zip(&dpre) {
                    *gb += d;
                }
            }
            let mut dx = vec![0.0; x.len()];
            for (i, &xi) in x.iter().enumerate() {
                let row = w_off + i * width;
                let wrow = &self.values[row..row + width];
                if let (Some(g), true) = (grads.as_deref_mut(), xi != 0.0) {
                    for (g, d) in g[row..row + width].iter_mut().zip(&dpre) {
                        *g += xi * d;
                    }
                }
                dx[i] = wrow.iter().zip(&dpre).map(|(w, d)| w * d).sum();
            }
            dy = dx;
        }
        Ok(dy)
    }
}

/// `Q_a = v + adv_a - mean(adv)`.
pub fn dueling_combine(v: f64, adv: &[f64]) -> Vec<f64> {
    if adv.is_empty() {
        return Vec::new();
    }
    let mean = adv.iter().sum::<f64>() / adv.len() as f64;
    adv.iter().map(|a| v + (a - mean)).collect()
}

/// Adaptive-moment optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl OptState {
    pub fn new(params: &Params, lr: f64) -> Self {
        OptState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; params.len()],
            v: vec![0.0; params.len()],
        }
    }
}

/// One bias-corrected adaptive-moment step along `-grads`.
pub fn opt_step(params: &mut Params, grads: &[f64], opt: &mut OptState) -> Result<()> {
    contract!(
        grads.len() == params.len() && opt.m.len() == params.len(),
        "optimizer shapes disagree with parameters"
    );
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Training(format!("non-finite gradient at parameter {i}")));
    }
    opt.step += 1;
    let t = opt.step as f64;
    let c1 = 1.0 - opt.beta1.powf(t);
    let c2 = 1.0 - opt.beta2.powf(t);
    let step = opt.lr * c2.sqrt() / c1;
    for ((p, g), (m, v)) in params
        .values
        .iter_mut()
        .zip(grads)
        .zip(opt.m.iter_mut().zip(opt.v.iter_mut()))
    {
        *m = opt.beta1 * *m + (1.0 - opt.beta1) * g;
        *v = opt.beta2 * *v + (1.0 - opt.beta2) * g * g;
        *p -= step * *m / (v.sqrt() + opt.eps * c2.sqrt());
    }
    Ok(())
}

/// `target <- mix * online + (1 - mix) * target`.
pub fn sync_target(target: &mut Params, online: &Params, mix: f64) -> Result<()> {
    contract!((0.0..=1.0).contains(&mix), "mix {mix} outside [0,1]");
    contract!(
        target.spec == online.spec,
        "target and online networks have different layouts"
    );
    if mix == 1.0 {
        target.values.copy_from_slice(&online.values);
    } else if mix > 0.0 {
        for (t, o) in target.values.iter_mut().zip(&online.values) {
            *t = mix * o + (1.0 - mix) * *t;
        }
    }
    Ok(())
}

/// Largest relative gap between [`Params::backward`] and central finite
/// differences of the loss `sum_k weights[k] * output[k]` at `input`, over
/// every parameter. Gaps are relative to `max(|analytic|, |numeric|, 1e-8)`.
pub fn gradient_check(params: &Params, input: &[f64], weights: &[f64], h: f64) -> Result<f64> {
    contract!(h > 0.0, "finite-difference step must be positive");
    let loss = |p: &Params| -> Result<f64> {
        Ok(p.forward(input)?.iter().zip(weights).map(|(y, w)| y * w).sum())
    };
    let mut cache = Cache::default();
    params.forward_cached(input, &mut cache)?;
    let mut analytic = params.zero_grads();
    params.backward(&cache, weights, &mut analytic)?;

    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for (i, a) in analytic.iter().enumerate() {
        let v = probe.values[i];
        probe.values[i] = v + h;
        let up = loss(&probe)?;
        probe.values[i] = v - h;
        let down = loss(&probe)?;
        probe.values[i] = v;
        let n = (up - down) / (2.0 * h);
        worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(1e-8));
    }
    Ok(worst)
}
