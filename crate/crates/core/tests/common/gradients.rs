//! Finite-difference checks of every differentiable building block. Each
//! check draws random parameters, inputs and upstream gradients, and
//! returns the worst global relative error over all points.

use ctsgan_core::nn::{
    bce_with_logits, dense_backward, dense_forward, gradient_check, gru_step, gru_step_backward,
    moment_loss, mse, Activation, Gradients, Gru, GruParams, ParameterStore, RecurrentNet, Tensor,
};
use ctsgan_core::seed::{self, Rng};
use ctsgan_core::Result;
use rand::Rng as _;

pub const TOLERANCE: f64 = 1e-4;

fn uniform(rng: &mut Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn matrix(rng: &mut Rng, r: usize, c: usize) -> Tensor {
    Tensor::matrix(r, c, uniform(rng, r * c, 1.0)).unwrap()
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn check(f: impl FnMut(&[f64]) -> Result<f64>, point: &[f64], analytic: &[f64]) -> f64 {
    gradient_check(f, point, analytic, TOLERANCE).unwrap().max_rel_error
}

/// Splits `flat` into consecutive tensors shaped like `like`.
fn unpack(flat: &[f64], like: &[&Tensor]) -> Vec<Tensor> {
    let mut offset = 0;
    like.iter()
        .map(|t| {
            let n = t.len();
            let out = Tensor::new(t.shape().to_vec(), flat[offset..offset + n].to_vec()).unwrap();
            offset += n;
            out
        })
        .collect()
}

fn pack(parts: &[&Tensor]) -> Vec<f64> {
    parts.iter().flat_map(|t| t.data().iter().copied()).collect()
}

fn worst(points: usize, seed_value: u64, mut one: impl FnMut(&mut Rng) -> f64) -> f64 {
    (0..points)
        .map(|i| one(&mut seed::rng(seed::mix(seed_value, i as u64))))
        .fold(0.0, f64::max)
}

pub fn dense(points: usize) -> f64 {
    worst(points, 1, |rng| {
        let (x, w, b) = (matrix(rng, 3, 4), matrix(rng, 4, 2), Tensor::vector(uniform(rng, 2, 1.0)));
        let upstream = matrix(rng, 3, 2);
        let (_, cache) = dense_forward(&x, &w, &b).unwrap();
        let g = dense_backward(&upstream, &cache, &w).unwrap();
        let like = [&x, &w, &b];
        check(
            |p| {
                let t = unpack(p, &like);
                Ok(dot(&dense_forward(&t[0], &t[1], &t[2])?.0, &upstream))
            },
            &pack(&like),
            &pack(&[&g.dx, &g.dw, &g.db]),
        )
    })
}

fn gru_tensors(rng: &mut Rng, input: usize, hidden: usize) -> Vec<Tensor> {
    let mut out = Vec::new();
    for _ in 0..3 {
        out.push(matrix(rng, input, hidden));
        out.push(matrix(rng, hidden, hidden));
        out.push(Tensor::vector(uniform(rng, hidden, 1.0)));
    }
    out
}

fn gru_params(t: &[Tensor]) -> GruParams<'_> {
    GruParams {
        w_z: &t[0],
        u_z: &t[1],
        b_z: &t[2],
        w_r: &t[3],
        u_r: &t[4],
        b_r: &t[5],
        w_h: &t[6],
        u_h: &t[7],
        b_h: &t[8],
    }
}

pub fn gru_cell(points: usize) -> f64 {
    worst(points, 2, |rng| {
        let (x, h) = (matrix(rng, 2, 3), matrix(rng, 2, 4));
        let weights = gru_tensors(rng, 3, 4);
        let upstream = matrix(rng, 2, 4);
        let (_, cache) = gru_step(&x, &h, &gru_params(&weights)).unwrap();
        let g = gru_step_backward(&upstream, &cache, &gru_params(&weights)).unwrap();
        let mut like = vec![&x, &h];
        like.extend(weights.iter());
        let mut analytic = vec![&g.dx, &g.dh];
        analytic.extend(g.params.iter());
        check(
            |p| {
                let t = unpack(p, &like);
                let (h2, _) = gru_step(&t[0], &t[1], &gru_params(&t[2..]))?;
                Ok(dot(&h2, &upstream))
            },
            &pack(&like),
            &pack(&analytic),
        )
    })
}

fn randomized_store(init: impl Fn(&mut ParameterStore, &mut Rng), rng: &mut Rng) -> ParameterStore {
    let mut store = ParameterStore::new();
    init(&mut store, rng);
    let n = store.num_scalars();
    store.unflatten(&uniform(rng, n, 1.0)).unwrap();
    store
}

fn flat_grads(store: &ParameterStore, grads: &Gradients) -> Vec<f64> {
    ctsgan_core::nn::flatten_grads(store, grads).unwrap()
}

/// A bare GRU unrolled over `steps`, loss `Σ_t ⟨h_t, R_t⟩`, checked with
/// respect to its weights and every input.
pub fn gru_unrolled(points: usize, steps: usize) -> f64 {
    let gru = Gru::new("cell", 3, 4);
    worst(points, 3, |rng| {
        let store = randomized_store(|s, r| gru.init(s, r).unwrap(), rng);
        let xs: Vec<Tensor> = (0..steps).map(|_| matrix(rng, 2, 3)).collect();
        let upstream: Vec<Tensor> = (0..steps).map(|_| matrix(rng, 2, 4)).collect();

        let run = |store: &ParameterStore, xs: &[Tensor]| -> Result<(f64, Vec<_>)> {
            let mut h = Tensor::zeros(&[2, 4]);
            let mut loss = 0.0;
            let mut caches = Vec::new();
            for (x, r) in xs.iter().zip(&upstream) {
                let (next, cache) = gru.step(store, x, &h)?;
                loss += dot(&next, r);
                caches.push(cache);
                h = next;
            }
            Ok((loss, caches))
        };
        let (_, caches) = run(&store, &xs).unwrap();
        let mut grads = store.zero_grads();
        let mut dh = Tensor::zeros(&[2, 4]);
        let mut dxs = vec![Tensor::zeros(&[0]); steps];
        for t in (0..steps).rev() {
            dh.add_assign(&upstream[t]);
            let (dx, dh_prev) = gru.backward(&store, &caches[t], &dh, &mut grads).unwrap();
            dxs[t] = dx;
            dh = dh_prev;
        }
        let n_params = store.num_scalars();
        let mut point = store.flatten();
        point.extend(pack(&xs.iter().collect::<Vec<_>>()));
        let mut analytic = flat_grads(&store, &grads);
        analytic.extend(pack(&dxs.iter().collect::<Vec<_>>()));
        check(
            |p| {
                let mut s = store.clone();
                s.unflatten(&p[..n_params])?;
                let xs = unpack(&p[n_params..], &xs.iter().collect::<Vec<_>>());
                Ok(run(&s, &xs)?.0)
            },
            &point,
            &analytic,
        )
    })
}

/// GRU plus per-step dense head, in plain and feedback modes.
pub fn stacked(points: usize, steps: usize) -> f64 {
    let plain = RecurrentNet::new("net", 3, 4, 2, Activation::Sigmoid);
    let feedback = RecurrentNet::new("fb", 3, 4, 2, Activation::Identity);
    worst(points, 4, |rng| {
        let mut errors = Vec::new();
        for (net, ext) in [(&plain, 3), (&feedback, 1)] {
            let store = randomized_store(|s, r| net.init(s, r).unwrap(), rng);
            let xs: Vec<Tensor> = (0..steps).map(|_| matrix(rng, 2, ext)).collect();
            let upstream: Vec<Tensor> = (0..steps).map(|_| matrix(rng, 2, 2)).collect();
            let run = |s: &ParameterStore, xs: &[Tensor]| {
                if ext == net.input_dim() {
                    net.forward(s, xs)
                } else {
                    net.forward_feedback(s, xs)
                }
            };
            let (_, cache) = run(&store, &xs).unwrap();
            let (dxs, grads) = net.backward(&store, &cache, &upstream).unwrap();
            let n_params = store.num_scalars();
            let mut point = store.flatten();
            point.extend(pack(&xs.iter().collect::<Vec<_>>()));
            let mut analytic = flat_grads(&store, &grads);
            analytic.extend(pack(&dxs.iter().collect::<Vec<_>>()));
            errors.push(check(
                |p| {
                    let mut s = store.clone();
                    s.unflatten(&p[..n_params])?;
                    let xs = unpack(&p[n_params..], &xs.iter().collect::<Vec<_>>());
                    let (out, _) = run(&s, &xs)?;
                    Ok(out.iter().zip(&upstream).map(|(o, r)| dot(o, r)).sum())
                },
                &point,
                &analytic,
            ));
        }
        errors.into_iter().fold(0.0, f64::max)
    })
}

pub fn mse_loss(points: usize) -> f64 {
    worst(points, 5, |rng| {
        let (pred, target) = (matrix(rng, 4, 3), matrix(rng, 4, 3));
        let (_, g) = mse(&pred, &target).unwrap();
        check(
            |p| Ok(mse(&Tensor::matrix(4, 3, p.to_vec())?, &target)?.0),
            pred.data(),
            g.data(),
        )
    })
}

pub fn bce_loss(points: usize) -> f64 {
    worst(points, 6, |rng| {
        let logits = Tensor::matrix(5, 1, uniform(rng, 5, 6.0)).unwrap();
        let labels =
            Tensor::matrix(5, 1, (0..5).map(|_| f64::from(rng.random_bool(0.5) as u8)).collect()).unwrap();
        let (_, g) = bce_with_logits(&logits, &labels).unwrap();
        check(
            |p| Ok(bce_with_logits(&Tensor::matrix(5, 1, p.to_vec())?, &labels)?.0),
            logits.data(),
            g.data(),
        )
    })
}

pub fn moment(points: usize) -> f64 {
    worst(points, 7, |rng| {
        let generated: Vec<Tensor> = (0..3).map(|_| matrix(rng, 6, 2)).collect();
        let real: Vec<Tensor> = (0..3).map(|_| matrix(rng, 8, 2)).collect();
        let (_, g) = moment_loss(&generated, &real).unwrap();
        let like: Vec<&Tensor> = generated.iter().collect();
        check(
            |p| Ok(moment_loss(&unpack(p, &like), &real)?.0),
            &pack(&like),
            &pack(&g.iter().collect::<Vec<_>>()),
        )
    })
}

/// `(component, worst relative error)` for every check.
pub fn all(points: usize) -> Vec<(&'static str, f64)> {
    vec![
        ("dense", dense(points)),
        ("gru_cell", gru_cell(points)),
        ("gru_unrolled_8", gru_unrolled(points, 8)),
        ("gru_dense_stack", stacked(points, 8)),
        ("mse", mse_loss(points)),
        ("bce_with_logits", bce_loss(points)),
        ("moment", moment(points)),
    ]
}
