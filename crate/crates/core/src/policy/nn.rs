//! Small fully connected networks with manual backpropagation.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Tanh,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// Shape `(inputs, outputs)`.
    pub w: Array2<f32>,
    pub b: Array1<f32>,
}

impl Linear {
    fn new<R: Rng>(rng: &mut R, inputs: usize, outputs: usize) -> Self {
        let bound = 1.0 / (inputs as f32).sqrt();
        Self {
            w: Array2::from_shape_fn((inputs, outputs), |_| rng.gen_range(-bound..bound)),
            b: Array1::from_shape_fn(outputs, |_| rng.gen_range(-bound..bound)),
        }
    }
}

/// ReLU hidden layers followed by a linear layer and an output activation.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub output: Activation,
}

/// Intermediate values kept from a forward pass for backpropagation.
pub struct Cache {
    inputs: Vec<Array2<f32>>,
    output: Array2<f32>,
}

impl Cache {
    pub fn output(&self) -> &Array2<f32> {
        &self.output
    }
}

#[derive(Clone, Debug)]
pub struct Gradients {
    pub layers: Vec<(Array2<f32>, Array1<f32>)>,
}

impl Gradients {
    pub fn norm(&self) -> f32 {
        self.layers
            .iter()
            .map(|(w, b)| w.iter().chain(b.iter()).map(|x| x * x).sum::<f32>())
            .sum::<f32>()
            .sqrt()
    }

    /// Rescales so the global norm is at most `max`.
    pub fn clip(&mut self, max: f32) {
        let n = self.norm();
        if n > max && n.is_finite() {
            let s = max / n;
            for (w, b) in &mut self.layers {
                *w *= s;
                *b *= s;
            }
        }
    }
}

impl Mlp {
    pub fn new<R: Rng>(rng: &mut R, sizes: &[usize], output: Activation) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| Linear::new(rng, w[0], w[1]))
            .collect();
        Self { layers, output }
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().expect("at least one layer").w.ncols()
    }

    pub fn forward(&self, x: &Array2<f32>) -> Array2<f32> {
        self.forward_cached(x).output
    }

    pub fn forward_cached(&self, x: &Array2<f32>) -> Cache {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.w) + &layer.b;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            } else if self.output == Activation::Tanh {
                z.mapv_inplace(f32::tanh);
            }
            inputs.push(h);
            h = z;
        }
        Cache { inputs, output: h }
    }

    /// Gradients of the parameters and of the input given the gradient of
    /// a scalar loss with respect to the output.
    pub fn backward(&self, cache: &Cache, d_out: &Array2<f32>) -> (Gradients, Array2<f32>) {
        let mut delta = match self.output {
            Activation::Identity => d_out.clone(),
            Activation::Tanh => d_out * &cache.output.mapv(|y| 1.0 - y * y),
        };
        let mut grads = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let input = &cache.inputs[i];
            let dw = input.t().dot(&delta);
            let db = delta.sum_axis(Axis(0));
            let mut dx = delta.dot(&self.layers[i].w.t());
            if i > 0 {
                // `input` is the ReLU output of the previous layer.
                dx.zip_mut_with(input, |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0
                    }
                });
            }
            grads.push((dw, db));
            delta = dx;
        }
        grads.reverse();
        (Gradients { layers: grads }, delta)
    }

    /// Polyak averaging toward `source`.
    pub fn soft_update(&mut self, source: &Mlp, tau: f32) {
        for (t, s) in self.layers.iter_mut().zip(&source.layers) {
            t.w.zip_mut_with(&s.w, |a, &b| *a += tau * (b - *a));
            t.b.zip_mut_with(&s.b, |a, &b| *a += tau * (b - *a));
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub t: u64,
    pub m: Vec<(Array2<f32>, Array1<f32>)>,
    pub v: Vec<(Array2<f32>, Array1<f32>)>,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f32) -> Self {
        let zeros: Vec<_> = net
            .layers
            .iter()
            .map(|l| (Array2::zeros(l.w.raw_dim()), Array1::zeros(l.b.raw_dim())))
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let step = self.lr * c2.sqrt() / c1;
        let eps = self.eps;
        for (((layer, (gw, gb)), (mw, mb)), (vw, vb)) in net
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            update(&mut layer.w, gw, mw, vw, b1, b2, step, eps);
            update(&mut layer.b, gb, mb, vb, b1, b2, step, eps);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn update<D: ndarray::Dimension>(
    p: &mut ndarray::Array<f32, D>,
    g: &ndarray::Array<f32, D>,
    m: &mut ndarray::Array<f32, D>,
    v: &mut ndarray::Array<f32, D>,
    b1: f32,
    b2: f32,
    step: f32,
    eps: f32,
) {
    ndarray::Zip::from(p)
        .and(g)
        .and(m)
        .and(v)
        .for_each(|p, &g, m, v| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= step * *m / (v.sqrt() + eps);
        });
}

/// Flat, serializable form of a network.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MlpData {
    pub sizes: Vec<usize>,
    pub output: Activation,
    pub weights: Vec<Vec<f32>>,
    pub biases: Vec<Vec<f32>>,
}

impl From<&Mlp> for MlpData {
    fn from(net: &Mlp) -> Self {
        let mut sizes = vec![net.inputs()];
        sizes.extend(net.layers.iter().map(|l| l.w.ncols()));
        Self {
            sizes,
            output: net.output,
            weights: net.layers.iter().map(|l| l.w.iter().copied().collect()).collect(),
            biases: net.layers.iter().map(|l| l.b.to_vec()).collect(),
        }
    }
}

impl TryFrom<MlpData> for Mlp {
    type Error = String;

    fn try_from(d: MlpData) -> Result<Self, Self::Error> {
        if d.sizes.len() < 2
            || d.weights.len() != d.sizes.len() - 1
            || d.biases.len() != d.weights.len()
        {
            return Err("layer count mismatch".into());
        }
        let layers = d
            .sizes
            .windows(2)
            .zip(d.weights.into_iter().zip(d.biases))
            .map(|(s, (w, b))| {
                let w = Array2::from_shape_vec((s[0], s[1]), w).map_err(|e| e.to_string())?;
                if b.len() != s[1] {
                    return Err("bias size mismatch".to_string());
                }
                Ok(Linear { w, b: Array1::from(b) })
            })
            .collect::<Result<_, _>>()?;
        Ok(Mlp {
            layers,
            output: d.output,
        })
    }
}
