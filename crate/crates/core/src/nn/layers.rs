use serde::{Deserialize, Serialize};

use super::{Gradients, ParameterStore, Tensor};
use crate::error::{Error, Result};
use crate::seed::Rng;

/// Logistic function that never exponentiates a positive argument.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn accumulate(grads: &mut Gradients, name: &str, g: Tensor) {
    match grads.get_mut(name) {
        Some(acc) => acc.add_assign(&g),
        None => {
            grads.insert(name.to_string(), g);
        }
    }
}

pub struct DenseCache {
    x: Tensor,
}

pub struct DenseGrads {
    pub dx: Tensor,
    pub dw: Tensor,
    pub db: Tensor,
}

/// `y = x·W + b` for a batch `x` of shape `[B, in]`.
pub fn dense_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<(Tensor, DenseCache)> {
    let mut y = x.matmul(w)?;
    y.add_row(b)?;
    Ok((y, DenseCache { x: x.clone() }))
}

pub fn dense_backward(grad_out: &Tensor, cache: &DenseCache, w: &Tensor) -> Result<DenseGrads> {
    if grad_out.cols() != w.cols() || grad_out.rows() != cache.x.rows() {
        return Err(Error::ShapeMismatch(format!(
            "dense backward: grad {:?}, weight {:?}",
            grad_out.shape(),
            w.shape()
        )));
    }
    Ok(DenseGrads {
        dx: grad_out.matmul_t(w)?,
        dw: cache.x.t_matmul(grad_out)?,
        db: grad_out.sum_rows(),
    })
}

/// Fully connected layer whose parameters live in a [`ParameterStore`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub prefix: String,
    pub input: usize,
    pub output: usize,
}

impl Dense {
    pub fn new(prefix: &str, input: usize, output: usize) -> Self {
        Self {
            prefix: prefix.to_string(),
            input,
            output,
        }
    }

    fn w(&self) -> String {
        format!("{}.weight", self.prefix)
    }

    fn b(&self) -> String {
        format!("{}.bias", self.prefix)
    }

    pub fn init(&self, store: &mut ParameterStore, rng: &mut Rng) -> Result<()> {
        store.insert_uniform(&self.w(), &[self.input, self.output], self.input, rng)?;
        store.insert_zeros(&self.b(), &[self.output])
    }

    pub fn num_params(&self) -> usize {
        self.input * self.output + self.output
    }

    pub fn forward(&self, store: &ParameterStore, x: &Tensor) -> Result<Tensor> {
        Ok(dense_forward(x, store.get(&self.w()), store.get(&self.b()))?.0)
    }

    /// Accumulates parameter gradients and returns `∂L/∂x`.
    pub fn backward(
        &self,
        store: &ParameterStore,
        x: &Tensor,
        dy: &Tensor,
        grads: &mut Gradients,
    ) -> Result<Tensor> {
        let cache = DenseCache { x: x.clone() };
        let g = dense_backward(dy, &cache, store.get(&self.w()))?;
        accumulate(grads, &self.w(), g.dw);
        accumulate(grads, &self.b(), g.db);
        Ok(g.dx)
    }
}

/// Borrowed GRU weights. Input weights are `[in, H]`, recurrent `[H, H]`.
pub struct GruParams<'a> {
    pub w_z: &'a Tensor,
    pub u_z: &'a Tensor,
    pub b_z: &'a Tensor,
    pub w_r: &'a Tensor,
    pub u_r: &'a Tensor,
    pub b_r: &'a Tensor,
    pub w_h: &'a Tensor,
    pub u_h: &'a Tensor,
    pub b_h: &'a Tensor,
}

#[derive(Debug, Clone)]
pub struct GruCache {
    x: Tensor,
    h: Tensor,
    z: Tensor,
    r: Tensor,
    rh: Tensor,
    candidate: Tensor,
}

pub struct GruGrads {
    pub dx: Tensor,
    pub dh: Tensor,
    /// In the order w_z, u_z, b_z, w_r, u_r, b_r, w_h, u_h, b_h.
    pub params: [Tensor; 9],
}

fn affine(x: &Tensor, w: &Tensor, h: &Tensor, u: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut a = x.matmul(w)?;
    a.add_assign(&h.matmul(u)?);
    a.add_row(b)?;
    Ok(a)
}

/// One GRU step:
/// `z = σ(x·W_z + h·U_z + b_z)`, `r = σ(x·W_r + h·U_r + b_r)`,
/// `h̃ = tanh(x·W_h + (r⊙h)·U_h + b_h)`, `h' = (1−z)⊙h + z⊙h̃`.
pub fn gru_step(x: &Tensor, h: &Tensor, p: &GruParams) -> Result<(Tensor, GruCache)> {
    if x.cols() != p.w_z.rows() || h.cols() != p.u_z.rows() || x.rows() != h.rows() {
        return Err(Error::ShapeMismatch(format!(
            "gru step: x {:?}, h {:?}, W {:?}",
            x.shape(),
            h.shape(),
            p.w_z.shape()
        )));
    }
    let z = affine(x, p.w_z, h, p.u_z, p.b_z)?.map(sigmoid);
    let r = affine(x, p.w_r, h, p.u_r, p.b_r)?.map(sigmoid);
    let rh = r.zip_map(h, |a, b| a * b);
    let candidate = affine(x, p.w_h, &rh, p.u_h, p.b_h)?.map(f64::tanh);
    let mut h_next = z.zip_map(h, |z, h| (1.0 - z) * h);
    h_next.add_assign(&z.zip_map(&candidate, |z, c| z * c));
    Ok((
        h_next,
        GruCache {
            x: x.clone(),
            h: h.clone(),
            z,
            r,
            rh,
            candidate,
        },
    ))
}

pub fn gru_step_backward(dh_next: &Tensor, cache: &GruCache, p: &GruParams) -> Result<GruGrads> {
    let GruCache {
        x,
        h,
        z,
        r,
        rh,
        candidate,
    } = cache;
    // h' = (1 - z) h + z c
    let dz = dh_next
        .zip_map(candidate, |g, c| g * c)
        .zip_map(&dh_next.zip_map(h, |g, h| g * h), |a, b| a - b);
    let dc = dh_next.zip_map(z, |g, z| g * z);
    let mut dh = dh_next.zip_map(z, |g, z| g * (1.0 - z));

    let da_h = dc.zip_map(candidate, |g, c| g * (1.0 - c * c));
    let dw_h = x.t_matmul(&da_h)?;
    let du_h = rh.t_matmul(&da_h)?;
    let db_h = da_h.sum_rows();
    let mut dx = da_h.matmul_t(p.w_h)?;
    let drh = da_h.matmul_t(p.u_h)?;
    let dr = drh.zip_map(h, |g, h| g * h);
    dh.add_assign(&drh.zip_map(r, |g, r| g * r));

    let da_r = dr.zip_map(r, |g, r| g * r * (1.0 - r));
    let dw_r = x.t_matmul(&da_r)?;
    let du_r = h.t_matmul(&da_r)?;
    let db_r = da_r.sum_rows();
    dx.add_assign(&da_r.matmul_t(p.w_r)?);
    dh.add_assign(&da_r.matmul_t(p.u_r)?);

    let da_z = dz.zip_map(z, |g, z| g * z * (1.0 - z));
    let dw_z = x.t_matmul(&da_z)?;
    let du_z = h.t_matmul(&da_z)?;
    let db_z = da_z.sum_rows();
    dx.add_assign(&da_z.matmul_t(p.w_z)?);
    dh.add_assign(&da_z.matmul_t(p.u_z)?);

    Ok(GruGrads {
        dx,
        dh,
        params: [dw_z, du_z, db_z, dw_r, du_r, db_r, dw_h, du_h, db_h],
    })
}

const GRU_NAMES: [&str; 9] = ["w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h"];

/// GRU cell whose weights live in a [`ParameterStore`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gru {
    pub prefix: String,
    pub input: usize,
    pub hidden: usize,
}

impl Gru {
    pub fn new(prefix: &str, input: usize, hidden: usize) -> Self {
        Self {
            prefix: prefix.to_string(),
            input,
            hidden,
        }
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    pub fn init(&self, store: &mut ParameterStore, rng: &mut Rng) -> Result<()> {
        for gate in ["z", "r", "h"] {
            store.insert_uniform(&self.name(&format!("w_{gate}")), &[self.input, self.hidden], self.input, rng)?;
            store.insert_uniform(&self.name(&format!("u_{gate}")), &[self.hidden, self.hidden], self.hidden, rng)?;
            store.insert_zeros(&self.name(&format!("b_{gate}")), &[self.hidden])?;
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        3 * (self.input * self.hidden + self.hidden * self.hidden + self.hidden)
    }

    pub fn params<'a>(&self, store: &'a ParameterStore) -> GruParams<'a> {
        GruParams {
            w_z: store.get(&self.name("w_z")),
            u_z: store.get(&self.name("u_z")),
            b_z: store.get(&self.name("b_z")),
            w_r: store.get(&self.name("w_r")),
            u_r: store.get(&self.name("u_r")),
            b_r: store.get(&self.name("b_r")),
            w_h: store.get(&self.name("w_h")),
            u_h: store.get(&self.name("u_h")),
            b_h: store.get(&self.name("b_h")),
        }
    }

    pub fn step(&self, store: &ParameterStore, x: &Tensor, h: &Tensor) -> Result<(Tensor, GruCache)> {
        gru_step(x, h, &self.params(store))
    }

    /// Accumulates parameter gradients; returns `(∂L/∂x, ∂L/∂h)`.
    pub fn backward(
        &self,
        store: &ParameterStore,
        cache: &GruCache,
        dh_next: &Tensor,
        grads: &mut Gradients,
    ) -> Result<(Tensor, Tensor)> {
        let g = gru_step_backward(dh_next, cache, &self.params(store))?;
        for (part, t) in GRU_NAMES.iter().zip(g.params) {
            accumulate(grads, &self.name(part), t);
        }
        Ok((g.dx, g.dh))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Sigmoid,
}

impl Activation {
    fn apply(self, t: Tensor) -> Tensor {
        match self {
            Activation::Identity => t,
            Activation::Sigmoid => t.map(sigmoid),
        }
    }

    fn backward(self, dy: &Tensor, y: &Tensor) -> Tensor {
        match self {
            Activation::Identity => dy.clone(),
            Activation::Sigmoid => dy.zip_map(y, |g, y| g * y * (1.0 - y)),
        }
    }
}

struct StepCache {
    gru: GruCache,
    hidden: Tensor,
    output: Tensor,
}

/// Forward state kept for backpropagation through time.
pub struct SeqCache {
    steps: Vec<StepCache>,
    /// Width of the external input when the previous output is fed back.
    feedback_from: Option<usize>,
}

/// One GRU layer unrolled over time with a dense head at every step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrentNet {
    pub gru: Gru,
    pub head: Dense,
    pub activation: Activation,
}

impl RecurrentNet {
    pub fn new(name: &str, input: usize, hidden: usize, output: usize, activation: Activation) -> Self {
        Self {
            gru: Gru::new(&format!("{name}.gru"), input, hidden),
            head: Dense::new(&format!("{name}.head"), hidden, output),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.gru.input
    }

    pub fn output_dim(&self) -> usize {
        self.head.output
    }

    pub fn init(&self, store: &mut ParameterStore, rng: &mut Rng) -> Result<()> {
        self.gru.init(store, rng)?;
        self.head.init(store, rng)
    }

    pub fn num_params(&self) -> usize {
        self.gru.num_params() + self.head.num_params()
    }

    fn step(&self, store: &ParameterStore, x: &Tensor, h: &Tensor) -> Result<(Tensor, StepCache)> {
        let (h_next, gru) = self.gru.step(store, x, h)?;
        let output = self.activation.apply(self.head.forward(store, &h_next)?);
        Ok((
            h_next.clone(),
            StepCache {
                gru,
                hidden: h_next,
                output,
            },
        ))
    }

    /// Runs the sequence `inputs[t]` (each `[B, in]`) from a zero state.
    pub fn forward(&self, store: &ParameterStore, inputs: &[Tensor]) -> Result<(Vec<Tensor>, SeqCache)> {
        let batch = inputs.first().map(Tensor::rows).unwrap_or(0);
        let mut h = Tensor::zeros(&[batch, self.gru.hidden]);
        let mut steps = Vec::with_capacity(inputs.len());
        for x in inputs {
            let (h_next, cache) = self.step(store, x, &h)?;
            h = h_next;
            steps.push(cache);
        }
        let outputs = steps.iter().map(|s| s.output.clone()).collect();
        Ok((
            outputs,
            SeqCache {
                steps,
                feedback_from: None,
            },
        ))
    }

    /// Autoregressive run: the input at step `t` is `external[t]` followed
    /// by the output of step `t − 1` (zeros at `t = 0`).
    pub fn forward_feedback(
        &self,
        store: &ParameterStore,
        external: &[Tensor],
    ) -> Result<(Vec<Tensor>, SeqCache)> {
        let batch = external.first().map(Tensor::rows).unwrap_or(0);
        let ext_dim = external.first().map(Tensor::cols).unwrap_or(0);
        if ext_dim + self.output_dim() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "feedback input {ext_dim} + output {} != network input {}",
                self.output_dim(),
                self.input_dim()
            )));
        }
        let mut h = Tensor::zeros(&[batch, self.gru.hidden]);
        let mut prev = Tensor::zeros(&[batch, self.output_dim()]);
        let mut steps = Vec::with_capacity(external.len());
        for x in external {
            let input = Tensor::hcat(&[x, &prev])?;
            let (h_next, cache) = self.step(store, &input, &h)?;
            h = h_next;
            prev = cache.output.clone();
            steps.push(cache);
        }
        let outputs = steps.iter().map(|s| s.output.clone()).collect();
        Ok((
            outputs,
            SeqCache {
                steps,
                feedback_from: Some(ext_dim),
            },
        ))
    }

    /// Backpropagation through time. `d_outputs[t]` is `∂L/∂output_t`;
    /// returns `∂L/∂input_t` (external part only in feedback mode) and the
    /// parameter gradients.
    pub fn backward(
        &self,
        store: &ParameterStore,
        cache: &SeqCache,
        d_outputs: &[Tensor],
    ) -> Result<(Vec<Tensor>, Gradients)> {
        if d_outputs.len() != cache.steps.len() {
            return Err(Error::length("output gradients", cache.steps.len(), d_outputs.len()));
        }
        let mut grads = store.zero_grads();
        grads.retain(|k, _| k.starts_with(&self.gru.prefix) || k.starts_with(&self.head.prefix));
        let Some(first) = cache.steps.first() else {
            return Ok((Vec::new(), grads));
        };
        let batch = first.hidden.rows();
        let mut dh_next = Tensor::zeros(&[batch, self.gru.hidden]);
        let mut d_feedback = Tensor::zeros(&[batch, self.output_dim()]);
        let mut d_inputs = vec![Tensor::zeros(&[0]); cache.steps.len()];

        for (t, step) in cache.steps.iter().enumerate().rev() {
            let mut dy = d_outputs[t].clone();
            if cache.feedback_from.is_some() {
                dy.add_assign(&d_feedback);
            }
            let da = self.activation.backward(&dy, &step.output);
            let mut dh = self.head.backward(store, &step.hidden, &da, &mut grads)?;
            dh.add_assign(&dh_next);
            let (dx, dh_prev) = self.gru.backward(store, &step.gru, &dh, &mut grads)?;
            dh_next = dh_prev;
            d_inputs[t] = match cache.feedback_from {
                Some(ext) => {
                    d_feedback = dx.col_slice(ext, dx.cols());
                    dx.col_slice(0, ext)
                }
                None => dx,
            };
        }
        Ok((d_inputs, grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_gru(input: usize, hidden: usize) -> (Gru, ParameterStore) {
        let gru = Gru::new("g", input, hidden);
        let mut store = ParameterStore::new();
        gru.init(&mut store, &mut crate::seed::rng(0)).unwrap();
        let names: Vec<String> = store.names().map(String::from).collect();
        for n in names {
            let shape = store.get(&n).shape().to_vec();
            store.set(&n, Tensor::zeros(&shape)).unwrap();
        }
        (gru, store)
    }

    #[test]
    fn dense_identity_and_arithmetic() {
        let w = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let x = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        let (y, _) = dense_forward(&x, &w, &Tensor::vector(vec![0.0, 0.0])).unwrap();
        assert_eq!(y, x);
        let (y, _) = dense_forward(&x, &w, &Tensor::vector(vec![3.0, 3.0])).unwrap();
        assert_eq!(y.data(), &[4.0, 5.0]);
        assert!(dense_forward(&x, &Tensor::zeros(&[3, 1]), &Tensor::vector(vec![0.0])).is_err());
    }

    #[test]
    fn gru_zero_weights() {
        let (gru, store) = zero_gru(1, 1);
        let x = Tensor::zeros(&[1, 1]);
        let (h, cache) = gru.step(&store, &x, &Tensor::full(&[1, 1], 1.0)).unwrap();
        assert_eq!(cache.z.data(), &[0.5]);
        assert_eq!(cache.candidate.data(), &[0.0]);
        assert_eq!(h.data(), &[0.5]);
        let (h, _) = gru.step(&store, &x, &Tensor::zeros(&[1, 1])).unwrap();
        assert_eq!(h.data(), &[0.0]);
    }

    #[test]
    fn gru_shape_mismatch() {
        let (gru, store) = zero_gru(2, 3);
        assert!(gru
            .step(&store, &Tensor::zeros(&[1, 3]), &Tensor::zeros(&[1, 3]))
            .is_err());
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_eq!(sigmoid(0.0), 0.5);
    }
}
