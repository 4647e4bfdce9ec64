use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{Ablation, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Standard deviation of the Gaussian used for learned embeddings.
const EMBED_SIGMA: f64 = 0.02;

/// Size of the data a model is built for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Dims {
    pub n_nodes: usize,
    pub window: usize,
    pub n_features: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    /// Uniform in `±1/√fan_in`.
    Uniform(usize),
    Zeros,
    Ones,
    Normal,
}

/// Every parameter the configuration uses, in a fixed order.
fn layout(c: &ModelConfig, dims: Dims) -> Vec<(String, Vec<usize>, Init)> {
    let (n, w, ch) = (dims.n_nodes, dims.window, dims.n_features);
    let (d, dh, f) = (c.hidden, c.head_dim, c.spatial_dim);
    let mut out = Vec::new();
    let mut add = |name: String, shape: Vec<usize>, init: Init| out.push((name, shape, init));

    add("enc.w_o".into(), vec![ch, d], Init::Uniform(ch));
    add("enc.b_o".into(), vec![d], Init::Zeros);
    let adaptive = !c.has(Ablation::ZeroPrefill) && !c.has(Ablation::MeanPrefill) && !c.has(Ablation::NoAmstenc);
    if adaptive {
        add("enc.z_u".into(), vec![n, w, d], Init::Normal);
    }
    if !c.has(Ablation::NoAmstenc) {
        add("enc.p_t".into(), vec![w, d], Init::Normal);
    }

    if c.has(Ablation::NoMastdec) {
        add("head.w_lin".into(), vec![d, ch], Init::Uniform(d));
        add("head.b_lin".into(), vec![ch], Init::Zeros);
        return out;
    }

    for l in 0..c.blocks {
        let p = format!("block{l}");
        for h in 0..c.heads {
            for m in ["w_q", "w_k", "w_v"] {
                add(format!("{p}.att.head{h}.{m}"), vec![d, dh], Init::Uniform(d));
            }
        }
        add(format!("{p}.att.w_c"), vec![c.heads * dh, d], Init::Uniform(c.heads * dh));
        add(format!("{p}.att.b_c"), vec![d], Init::Zeros);
        add(format!("{p}.att.ln_gain"), vec![d], Init::Ones);
        add(format!("{p}.att.ln_bias"), vec![d], Init::Zeros);

        if !c.has(Ablation::NoGraphconv) {
            if !c.has(Ablation::NoMastatt) {
                let k = c.collapse_kernel;
                add(format!("{p}.sp.conv"), vec![k, d, d], Init::Uniform(k * d));
                add(format!("{p}.sp.conv_b"), vec![d], Init::Zeros);
                add(format!("{p}.sp.w_f"), vec![d, f], Init::Uniform(d));
                add(format!("{p}.sp.b_f"), vec![f], Init::Zeros);
                add(format!("{p}.sp.p_s"), vec![n, f], Init::Normal);
                for h in 0..c.heads {
                    add(format!("{p}.sp.head{h}.w_q"), vec![f, dh], Init::Uniform(f));
                    add(format!("{p}.sp.head{h}.w_k"), vec![f, dh], Init::Uniform(f));
                }
            }
            for k in 0..c.cheb_order {
                add(format!("{p}.gc.theta{k}"), vec![d, d], Init::Uniform(d));
            }
        }

        if !c.has(Ablation::NoGtconv) {
            for (i, &k) in c.kernel_sizes.iter().enumerate() {
                add(format!("{p}.tc.gamma{i}"), vec![k, d, 2 * d], Init::Uniform(k * d));
                add(format!("{p}.tc.gamma{i}_b"), vec![2 * d], Init::Zeros);
            }
            let kd = c.kernel_sizes.len() * d;
            add(format!("{p}.tc.w_merge"), vec![kd, d], Init::Uniform(kd));
            add(format!("{p}.tc.b_merge"), vec![d], Init::Zeros);
        }
        add(format!("{p}.tc.w_out"), vec![2 * d, d], Init::Uniform(2 * d));
        add(format!("{p}.tc.b_out"), vec![d], Init::Zeros);
        add(format!("{p}.tc.ln_gain"), vec![d], Init::Ones);
        add(format!("{p}.tc.ln_bias"), vec![d], Init::Zeros);
    }
    add("head.w1".into(), vec![d, d], Init::Uniform(d));
    add("head.b1".into(), vec![d], Init::Zeros);
    add("head.w2".into(), vec![d, ch], Init::Uniform(d));
    add("head.b2".into(), vec![ch], Init::Zeros);
    out
}

/// Named trainable tensors in declaration order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    tensors: IndexMap<String, Tensor>,
}

impl ParamStore {
    /// Seeded initialization. Weights are uniform in `±1/√fan_in`, biases
    /// zero, layer-norm gains one, embeddings Gaussian with σ = 0.02.
    pub fn init(config: &ModelConfig, dims: Dims, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, EMBED_SIGMA).expect("positive sigma");
        let mut tensors = IndexMap::new();
        for (name, shape, init) in layout(config, dims) {
            let len = crate::tensor::numel(&shape);
            let data: Vec<f64> = match init {
                Init::Uniform(fan_in) => {
                    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                    (0..len).map(|_| rng.random_range(-bound..=bound)).collect()
                }
                Init::Zeros => vec![0.0; len],
                Init::Ones => vec![1.0; len],
                Init::Normal => (0..len).map(|_| normal.sample(&mut rng)).collect(),
            };
            tensors.insert(name, Tensor::new(shape, data)?.with_grad());
        }
        Ok(ParamStore { tensors })
    }

    /// Store from explicit tensors; names and shapes must match the layout.
    pub fn from_tensors(config: &ModelConfig, dims: Dims, tensors: IndexMap<String, Tensor>) -> Result<Self> {
        config.validate()?;
        let expected = layout(config, dims);
        let mut problems = Vec::new();
        for (name, shape, _) in &expected {
            match tensors.get(name) {
                None => problems.push(format!("{name}: missing")),
                Some(t) if t.shape() != shape.as_slice() => {
                    problems.push(format!("{name}: shape {:?}, expected {shape:?}", t.shape()))
                }
                Some(_) => {}
            }
        }
        for name in tensors.keys() {
            if !expected.iter().any(|(n, _, _)| n == name) {
                problems.push(format!("{name}: not used by this configuration"));
            }
        }
        if !problems.is_empty() {
            return Err(Error::Input(format!("parameter mismatch: {}", problems.join("; "))));
        }
        let tensors = expected
            .into_iter()
            .map(|(name, _, _)| {
                let t = tensors[&name].clone();
                let t = if t.requires_grad() { t } else { t.with_grad() };
                (name, t)
            })
            .collect();
        Ok(ParamStore { tensors })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalars.
    pub fn n_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn zero_grad(&mut self) {
        self.tensors.values_mut().for_each(Tensor::zero_grad);
    }

    /// Records every tensor on `tape`, as trainable leaves or as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let v = if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (name.clone(), v)
            })
            .collect();
        Bound { vars }
    }

    /// Adds the gradients held by `tape` for the bound leaves.
    pub fn absorb_grads(&mut self, tape: &Tape, bound: &Bound) {
        for (name, var) in &bound.vars {
            if let (Some(g), Some(t)) = (tape.grad(*var), self.tensors.get_mut(name)) {
                t.accumulate_grad(g);
            }
        }
    }
}

/// Parameter name → tape handle for one forward pass.
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: IndexMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("parameter `{name}` is not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}
