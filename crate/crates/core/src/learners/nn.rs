//! Small dense networks with hand-written backpropagation and Adam.

use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::LearnerError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Relu => z.mapv_inplace(|x| x.max(0.0)),
            Activation::Tanh => z.mapv_inplace(f64::tanh),
            Activation::Identity => {}
        }
    }

    /// Multiplies `grad` by the derivative, expressed through the layer output.
    fn backprop(self, out: &Array2<f64>, grad: &mut Array2<f64>) {
        match self {
            Activation::Relu => Zip::from(grad).and(out).for_each(|g, &a| {
                if a <= 0.0 {
                    *g = 0.0;
                }
            }),
            Activation::Tanh => Zip::from(grad).and(out).for_each(|g, &a| *g *= 1.0 - a * a),
            Activation::Identity => {}
        }
    }
}

/// `y = act(x W + b)`, with `W` stored as inputs × outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Activations saved by a training forward pass; `values[0]` is the input.
#[derive(Debug, Clone)]
pub struct Tape {
    values: Vec<Array2<f64>>,
}

impl Tape {
    pub fn output(&self) -> &Array2<f64> {
        self.values.last().expect("tape always holds the input")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w: Vec<Array2<f64>>,
    pub b: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.w.iter().zip(&self.b) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases. The output layer is scaled by
    /// `head_scale` so a fresh softmax head starts close to uniform.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], hidden: &[Activation], head_scale: f64, rng: &mut R) -> Self {
        assert_eq!(sizes.len(), hidden.len() + 2, "one activation per hidden layer");
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, io)| {
                let (fan_in, fan_out) = (io[0], io[1]);
                let mut limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                if i == last {
                    limit *= head_scale;
                }
                Dense {
                    w: Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-limit..=limit)),
                    b: Array1::zeros(fan_out),
                    activation: if i == last { Activation::Identity } else { hidden[i] },
                }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(sizes: &[usize], hidden: &[Activation]) -> Self {
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, io)| Dense {
                w: Array2::zeros((io[0], io[1])),
                b: Array1::zeros(io[1]),
                activation: if i == last { Activation::Identity } else { hidden[i] },
            })
            .collect();
        Self { layers }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().unwrap().w.ncols()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_width()];
        s.extend(self.layers.iter().map(|l| l.w.ncols()));
        s
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut a = x.clone();
        for l in &self.layers {
            let mut z = a.dot(&l.w) + &l.b;
            l.activation.apply(&mut z);
            a = z;
        }
        a
    }

    pub fn forward_tape(&self, x: &Array2<f64>) -> Tape {
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(x.clone());
        for l in &self.layers {
            let mut z = values.last().unwrap().dot(&l.w) + &l.b;
            l.activation.apply(&mut z);
            values.push(z);
        }
        Tape { values }
    }

    /// Gradients of a scalar loss given `dout = ∂loss/∂output`, and `∂loss/∂input`.
    pub fn backward(&self, tape: &Tape, dout: Array2<f64>) -> (Gradients, Array2<f64>) {
        let n = self.layers.len();
        let mut gw = Vec::with_capacity(n);
        let mut gb = Vec::with_capacity(n);
        let mut g = dout;
        for (i, l) in self.layers.iter().enumerate().rev() {
            l.activation.backprop(&tape.values[i + 1], &mut g);
            gw.push(tape.values[i].t().dot(&g));
            gb.push(g.sum_axis(Axis(0)));
            g = g.dot(&l.w.t());
        }
        gw.reverse();
        gb.reverse();
        (Gradients { w: gw, b: gb }, g)
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Parameters in layer order, each weight matrix row-major followed by its bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<(), LearnerError> {
        if flat.len() != self.n_params() {
            return Err(LearnerError::Shape(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                flat.len()
            )));
        }
        let mut it = flat.iter();
        for l in &mut self.layers {
            l.w.iter_mut().chain(l.b.iter_mut()).for_each(|p| *p = *it.next().unwrap());
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(l.b.iter()).all(|x| x.is_finite()))
    }

    fn same_shape(&self, other: &Mlp) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.w.dim() == b.w.dim() && a.activation == b.activation)
    }
}

/// `target ← λ source + (1 − λ) target`.
pub fn soft_update(target: &mut Mlp, source: &Mlp, lambda: f64) -> Result<(), LearnerError> {
    if !target.same_shape(source) {
        return Err(LearnerError::Shape(format!(
            "soft update between {:?} and {:?}",
            target.sizes(),
            source.sizes()
        )));
    }
    for (t, s) in target.layers.iter_mut().zip(&source.layers) {
        Zip::from(&mut t.w).and(&s.w).for_each(|t, &s| *t = lambda * s + (1.0 - lambda) * *t);
        Zip::from(&mut t.b).and(&s.b).for_each(|t, &s| *t = lambda * s + (1.0 - lambda) * *t);
    }
    Ok(())
}

/// Row-wise softmax with the usual max shift.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|x| (x - m).exp());
        let s = row.sum();
        row /= s;
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Optimizer {
    Adam(Adam),
    Sgd { lr: f64 },
}

impl Optimizer {
    /// `adam_eps` is the denominator floor of Adam and unused by SGD.
    pub fn new(kind: OptimizerKind, net: &Mlp, lr: f64, adam_eps: f64) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(Adam { eps: adam_eps, ..Adam::new(net, lr) }),
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) {
        match self {
            Optimizer::Adam(a) => a.step(net, grads),
            Optimizer::Sgd { lr } => {
                for (i, l) in net.layers.iter_mut().enumerate() {
                    l.w.scaled_add(-*lr, &grads.w[i]);
                    l.b.scaled_add(-*lr, &grads.b[i]);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<(Array2<f64>, Array1<f64>)>,
    v: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        let zeros: Vec<_> = net
            .layers
            .iter()
            .map(|l| (Array2::zeros(l.w.dim()), Array1::zeros(l.b.len())))
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

    /// One descent step along `grads`.
    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let (lr, eps) = (self.lr, self.eps);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for (i, l) in net.layers.iter_mut().enumerate() {
            let (mw, mb) = &mut self.m[i];
            let (vw, vb) = &mut self.v[i];
            Zip::from(&mut l.w)
                .and(mw)
                .and(vw)
                .and(&grads.w[i])
                .for_each(|p, m, v, &g| update(p, m, v, g));
            Zip::from(&mut l.b)
                .and(mb)
                .and(vb)
                .and(&grads.b[i])
                .for_each(|p, m, v, &g| update(p, m, v, g));
        }
    }
}
