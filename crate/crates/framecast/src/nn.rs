//! Parameter storage, layer primitives, and the optimizer.
//!
//! Parameters live outside any graph as named `f64` arrays. Each forward
//! pass binds them into a fresh [`Graph`] as leaves; after `backward` the
//! per-parameter gradients are read back by name and fed to [`Adam`].

use indexmap::IndexMap;
use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Graph, NodeId};

/// Ordered map of named parameters. Insertion order is fixed by model
/// construction, which keeps every iteration deterministic.
#[derive(Clone, Default)]
pub struct ParamSet {
    params: IndexMap<String, ArrayD<f64>>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: ArrayD<f64>) {
        let name = name.into();
        assert!(
            self.params.insert(name.clone(), value).is_none(),
            "duplicate parameter {name}"
        );
    }

    pub fn get(&self, name: &str) -> &ArrayD<f64> {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    /// Overwrite an existing parameter; the shape must not change.
    pub fn set(&mut self, name: &str, value: ArrayD<f64>) {
        let slot = self
            .params
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        assert_eq!(slot.shape(), value.shape(), "shape change on {name}");
        *slot = value;
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<f64>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(|v| v.len()).sum()
    }

    /// Bind every parameter into `g` as a leaf, returning name -> node.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        let mut ids = IndexMap::new();
        for (name, value) in &self.params {
            ids.insert(name.clone(), g.leaf(value.clone()));
        }
        Bound { ids }
    }
}

/// Node ids of parameters bound into one graph.
pub struct Bound {
    ids: IndexMap<String, NodeId>,
}

impl Bound {
    pub fn id(&self, name: &str) -> NodeId {
        *self
            .ids
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    /// Collect gradients after a backward sweep, in parameter order.
    /// Parameters no path reached get zero gradients.
    pub fn grads(&self, g: &Graph, params: &ParamSet) -> IndexMap<String, ArrayD<f64>> {
        let mut out = IndexMap::new();
        for (name, id) in &self.ids {
            let grad = match g.grad(*id) {
                Some(gr) => gr.clone(),
                None => ArrayD::zeros(params.get(name).raw_dim()),
            };
            out.insert(name.clone(), grad);
        }
        out
    }
}

/// Draw from N(0, std^2) into the given shape.
pub fn normal_init(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> ArrayD<f64> {
    ArrayD::from_shape_fn(IxDyn(shape), |_| {
        let z: f64 = rng.sample(StandardNormal);
        z * std
    })
}

/// He-style scale for a conv kernel: sqrt(2 / fan_in).
pub fn he_std(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}

/// A named 2-d convolution whose weights live in a [`ParamSet`].
#[derive(Clone)]
pub struct Conv2d {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub bias: bool,
}

impl Conv2d {
    pub fn new(name: impl Into<String>, in_ch: usize, out_ch: usize, kernel: usize) -> Self {
        Conv2d {
            name: name.into(),
            in_ch,
            out_ch,
            kernel,
            stride: 1,
            pad: kernel / 2,
            bias: true,
        }
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }

    pub fn no_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    fn weight_name(&self) -> String {
        format!("{}.w", self.name)
    }

    fn bias_name(&self) -> String {
        format!("{}.b", self.name)
    }

    pub fn init(&self, params: &mut ParamSet, rng: &mut ChaCha8Rng) {
        let fan_in = self.in_ch * self.kernel * self.kernel;
        let w = normal_init(
            &[self.out_ch, self.in_ch, self.kernel, self.kernel],
            he_std(fan_in),
            rng,
        );
        params.insert(self.weight_name(), w);
        if self.bias {
            params.insert(self.bias_name(), ArrayD::zeros(IxDyn(&[self.out_ch])));
        }
    }

    pub fn forward(&self, g: &mut Graph, bound: &Bound, x: NodeId) -> NodeId {
        let w = bound.id(&self.weight_name());
        let b = self.bias.then(|| bound.id(&self.bias_name()));
        g.conv2d(x, w, b, self.stride, self.pad)
    }
}

/// A named affine map (B,in) -> (B,out).
#[derive(Clone)]
pub struct Linear {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, in_dim: usize, out_dim: usize) -> Self {
        Linear {
            name: name.into(),
            in_dim,
            out_dim,
        }
    }

    pub fn init(&self, params: &mut ParamSet, rng: &mut ChaCha8Rng) {
        let w = normal_init(&[self.in_dim, self.out_dim], he_std(self.in_dim), rng);
        params.insert(format!("{}.w", self.name), w);
        params.insert(
            format!("{}.b", self.name),
            ArrayD::zeros(IxDyn(&[self.out_dim])),
        );
    }

    pub fn forward(&self, g: &mut Graph, bound: &Bound, x: NodeId) -> NodeId {
        let w = bound.id(&format!("{}.w", self.name));
        let b = bound.id(&format!("{}.b", self.name));
        let y = g.matmul(x, w);
        g.add_rowvec(y, b)
    }
}

/// Adam with bias correction. Moment buffers are created lazily on the first
/// step and keyed by parameter name so they serialize with checkpoints.
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub m: IndexMap<String, ArrayD<f64>>,
    pub v: IndexMap<String, ArrayD<f64>>,
    pub t: u64,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: IndexMap::new(),
            v: IndexMap::new(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &IndexMap<String, ArrayD<f64>>) {
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, value) in params.params.iter_mut() {
            let grad = match grads.get(name) {
                Some(gr) => gr,
                None => continue,
            };
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(value.raw_dim()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(value.raw_dim()));
            azip(m, grad, |m, g| self.beta1 * *m + (1.0 - self.beta1) * g);
            azip(v, grad, |v, g| self.beta2 * *v + (1.0 - self.beta2) * g * g);
            for ((p, m), v) in value.iter_mut().zip(m.iter()).zip(v.iter()) {
                let mhat = m / bc1;
                let vhat = v / bc2;
                *p -= self.learning_rate * mhat / (vhat.sqrt() + self.epsilon);
            }
        }
    }
}

fn azip(dst: &mut ArrayD<f64>, src: &ArrayD<f64>, f: impl Fn(&f64, f64) -> f64) {
    for (d, s) in dst.iter_mut().zip(src.iter()) {
        *d = f(d, *s);
    }
}
