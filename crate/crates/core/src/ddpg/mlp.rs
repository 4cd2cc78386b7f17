//! Fully connected feed-forward network with rectified-linear hidden
//! layers and exact reverse-mode gradients.
//!
//! Weights are stored row-major `(out_dim, in_dim)` per layer. The backward
//! pass produces gradients with respect to every weight, bias, and the
//! input vector; the input gradient is what lets the actor update chain
//! through the critic's action input.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::rng::unit_open;
use crate::{Error, Result};

/// Activation applied to the final layer. Hidden layers are always ReLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputActivation {
    Sigmoid,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    /// weights[l] has shape (sizes[l+1], sizes[l]), row-major.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    output_activation: OutputActivation,
}

/// Reusable per-layer activation buffers for [`Mlp::forward_cached`].
#[derive(Debug, Clone, Default)]
pub struct Scratch {
    activations: Vec<Vec<f64>>,
}

/// Parameter gradients plus the input gradient; accumulate semantics.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub d_weights: Vec<Vec<f64>>,
    pub d_biases: Vec<Vec<f64>>,
    pub d_input: Vec<f64>,
    // work buffers for the backward sweep
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Mlp {
    /// Network with uniform `+/- 1/sqrt(fan_in)` weight and bias init.
    pub fn new(
        sizes: &[usize],
        output_activation: OutputActivation,
        rng: &mut impl RngCore,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(Error::param(format!("bad layer sizes {sizes:?}")));
        }
        let mut weights = Vec::with_capacity(sizes.len() - 1);
        let mut biases = Vec::with_capacity(sizes.len() - 1);
        for l in 0..sizes.len() - 1 {
            let bound = 1.0 / (sizes[l] as f64).sqrt();
            let w = (0..sizes[l] * sizes[l + 1])
                .map(|_| bound * (2.0 * unit_open(rng) - 1.0))
                .collect();
            let b = (0..sizes[l + 1])
                .map(|_| bound * (2.0 * unit_open(rng) - 1.0))
                .collect();
            weights.push(w);
            biases.push(b);
        }
        Ok(Mlp { sizes: sizes.to_vec(), weights, biases, output_activation })
    }

    /// All-zero parameters; useful as a known-output starting point.
    pub fn zeros(sizes: &[usize], output_activation: OutputActivation) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(Error::param(format!("bad layer sizes {sizes:?}")));
        }
        let weights = (0..sizes.len() - 1)
            .map(|l| vec![0.0; sizes[l] * sizes[l + 1]])
            .collect();
        let biases = (0..sizes.len() - 1).map(|l| vec![0.0; sizes[l + 1]]).collect();
        Ok(Mlp { sizes: sizes.to_vec(), weights, biases, output_activation })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output_activation
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        &self.weights[layer]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.weights[layer]
    }

    pub fn biases(&self, layer: usize) -> &[f64] {
        &self.biases[layer]
    }

    pub fn biases_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.biases[layer]
    }

    pub fn scratch(&self) -> Scratch {
        Scratch {
            activations: self.sizes[1..].iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    pub fn gradients(&self) -> Gradients {
        let max_dim = *self.sizes.iter().max().unwrap();
        Gradients {
            d_weights: self.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            d_biases: self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            d_input: vec![0.0; self.sizes[0]],
            delta: vec![0.0; max_dim],
            delta_prev: vec![0.0; max_dim],
        }
    }

    /// Forward pass writing post-activation values into `scratch`; returns
    /// the output slice.
    pub fn forward_cached<'a>(&self, x: &[f64], scratch: &'a mut Scratch) -> Result<&'a [f64]> {
        if x.len() != self.sizes[0] {
            return Err(Error::param(format!(
                "input has {} entries, network expects {}",
                x.len(),
                self.sizes[0]
            )));
        }
        let n_layers = self.weights.len();
        for l in 0..n_layers {
            let (done, rest) = scratch.activations.split_at_mut(l);
            let input: &[f64] = if l == 0 { x } else { &done[l - 1] };
            let out = &mut rest[0];
            let w = &self.weights[l];
            let b = &self.biases[l];
            let in_dim = self.sizes[l];
            let last = l == n_layers - 1;
            for (o, slot) in out.iter_mut().enumerate() {
                let row = &w[o * in_dim..(o + 1) * in_dim];
                let mut z = b[o];
                for (wi, xi) in row.iter().zip(input) {
                    z += wi * xi;
                }
                *slot = if last {
                    match self.output_activation {
                        OutputActivation::Linear => z,
                        OutputActivation::Sigmoid => sigmoid(z),
                    }
                } else {
                    z.max(0.0)
                };
            }
        }
        Ok(scratch.activations.last().unwrap())
    }

    /// Forward pass returning a fresh output vector.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut scratch = self.scratch();
        Ok(self.forward_cached(x, &mut scratch)?.to_vec())
    }

    /// Reverse-mode gradients for the forward pass recorded in `scratch`.
    ///
    /// `upstream` is dL/d(output) evaluated at the cached output. Parameter
    /// gradients accumulate into `grads` (call [`Gradients::zero`] between
    /// batches); `grads.d_input` is overwritten with dL/d(x).
    pub fn backward(
        &self,
        x: &[f64],
        scratch: &Scratch,
        upstream: &[f64],
        grads: &mut Gradients,
    ) -> Result<()> {
        if upstream.len() != self.output_dim() {
            return Err(Error::param(format!(
                "upstream gradient has {} entries, output has {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        let n_layers = self.weights.len();
        // delta = dL/dz for the current layer, starting from the top.
        {
            let out = &scratch.activations[n_layers - 1];
            for (o, slot) in grads.delta[..out.len()].iter_mut().enumerate() {
                let dadz = match self.output_activation {
                    OutputActivation::Linear => 1.0,
                    OutputActivation::Sigmoid => out[o] * (1.0 - out[o]),
                };
                *slot = upstream[o] * dadz;
            }
        }
        for l in (0..n_layers).rev() {
            let in_dim = self.sizes[l];
            let out_dim = self.sizes[l + 1];
            let input: &[f64] = if l == 0 { x } else { &scratch.activations[l - 1] };
            let w = &self.weights[l];
            for o in 0..out_dim {
                let d = grads.delta[o];
                if d != 0.0 {
                    let grow = &mut grads.d_weights[l][o * in_dim..(o + 1) * in_dim];
                    for (g, xi) in grow.iter_mut().zip(input) {
                        *g += d * xi;
                    }
                    grads.d_biases[l][o] += d;
                }
            }
            // dL/d(input of layer l)
            let prev = &mut grads.delta_prev[..in_dim];
            prev.fill(0.0);
            for o in 0..out_dim {
                let d = grads.delta[o];
                if d != 0.0 {
                    let row = &w[o * in_dim..(o + 1) * in_dim];
                    for (p, wi) in prev.iter_mut().zip(row) {
                        *p += d * wi;
                    }
                }
            }
            if l == 0 {
                grads.d_input.copy_from_slice(prev);
            } else {
                // ReLU mask of the previous layer's activations.
                let act = &scratch.activations[l - 1];
                for (p, a) in prev.iter_mut().zip(act) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
                grads.delta[..in_dim].copy_from_slice(prev);
            }
        }
        Ok(())
    }

    /// One plain SGD step: `theta -= lr * grad` (use a negative `lr` to
    /// ascend).
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) {
        for (w, g) in self.weights.iter_mut().zip(&grads.d_weights) {
            for (wi, gi) in w.iter_mut().zip(g) {
                *wi -= lr * gi;
            }
        }
        for (b, g) in self.biases.iter_mut().zip(&grads.d_biases) {
            for (bi, gi) in b.iter_mut().zip(g) {
                *bi -= lr * gi;
            }
        }
    }
}

impl Gradients {
    pub fn zero(&mut self) {
        for g in &mut self.d_weights {
            g.fill(0.0);
        }
        for g in &mut self.d_biases {
            g.fill(0.0);
        }
        self.d_input.fill(0.0);
    }
}

/// Polyak averaging: `target = (1 - tau) * target + tau * online`.
pub fn soft_update(target: &mut Mlp, online: &Mlp, tau: f64) -> Result<()> {
    if target.sizes != online.sizes {
        return Err(Error::param(format!(
            "shape mismatch: target {:?} vs online {:?}",
            target.sizes, online.sizes
        )));
    }
    for (t, o) in target.weights.iter_mut().zip(&online.weights) {
        for (ti, oi) in t.iter_mut().zip(o) {
            *ti += tau * (*oi - *ti);
        }
    }
    for (t, o) in target.biases.iter_mut().zip(&online.biases) {
        for (ti, oi) in t.iter_mut().zip(o) {
            *ti += tau * (*oi - *ti);
        }
    }
    Ok(())
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_network_outputs() {
        let sig = Mlp::zeros(&[3, 4, 1], OutputActivation::Sigmoid).unwrap();
        assert_eq!(sig.forward(&[0.3, -0.7, 2.0]).unwrap(), vec![0.5]);
        let lin = Mlp::zeros(&[3, 4, 1], OutputActivation::Linear).unwrap();
        assert_eq!(lin.forward(&[0.3, -0.7, 2.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn hand_computed_two_layer_case() {
        // 1 -> 1 -> 1 with relu hidden: x=2, w1=1.5, b1=-1, w2=0.5, b2=0.25.
        let mut net = Mlp::zeros(&[1, 1, 1], OutputActivation::Linear).unwrap();
        net.weights_mut(0)[0] = 1.5;
        net.biases_mut(0)[0] = -1.0;
        net.weights_mut(1)[0] = 0.5;
        net.biases_mut(1)[0] = 0.25;
        assert_abs_diff_eq!(net.forward(&[2.0]).unwrap()[0], 1.25, epsilon = 1e-15);
        // Negative pre-activation is clipped by the hidden relu.
        assert_abs_diff_eq!(net.forward(&[-2.0]).unwrap()[0], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn rejects_size_mismatch() {
        let net = Mlp::zeros(&[3, 4, 1], OutputActivation::Linear).unwrap();
        assert!(net.forward(&[1.0, 2.0]).is_err());
        assert!(Mlp::zeros(&[3], OutputActivation::Linear).is_err());
    }

    fn numeric_gradient(net: &mut Mlp, x: &[f64], layer: usize, idx: usize, bias: bool) -> f64 {
        let h = 1e-5;
        fn slot(net: &mut Mlp, layer: usize, idx: usize, bias: bool) -> &mut f64 {
            if bias {
                &mut net.biases_mut(layer)[idx]
            } else {
                &mut net.weights_mut(layer)[idx]
            }
        }
        let orig = *slot(net, layer, idx, bias);
        *slot(net, layer, idx, bias) = orig + h;
        let up = net.forward(x).unwrap()[0];
        *slot(net, layer, idx, bias) = orig - h;
        let dn = net.forward(x).unwrap()[0];
        *slot(net, layer, idx, bias) = orig;
        (up - dn) / (2.0 * h)
    }

    #[test]
    fn gradients_match_central_differences() {
        // Random configurations across shapes and both output activations.
        let shapes: [&[usize]; 4] = [&[2, 5, 1], &[3, 4, 4, 1], &[1, 3, 1], &[4, 6, 2]];
        let mut checked = 0usize;
        for cfg in 0..100 {
            let sizes = shapes[cfg % shapes.len()];
            let act = if cfg % 2 == 0 { OutputActivation::Linear } else { OutputActivation::Sigmoid };
            let mut rng = substream(1000 + cfg as u64, 0);
            let mut net = Mlp::new(sizes, act, &mut rng).unwrap();
            let x: Vec<f64> = (0..sizes[0]).map(|_| 2.0 * unit_open(&mut rng) - 1.0).collect();

            let mut scratch = net.scratch();
            let mut grads = net.gradients();
            net.forward_cached(&x, &mut scratch).unwrap();
            let mut upstream = vec![0.0; net.output_dim()];
            upstream[0] = 1.0;
            net.backward(&x, &scratch, &upstream, &mut grads).unwrap();

            for layer in 0..net.n_layers() {
                for idx in 0..net.weights(layer).len() {
                    let numeric = numeric_gradient(&mut net, &x, layer, idx, false);
                    let analytic = grads.d_weights[layer][idx];
                    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
                    assert!(
                        (analytic - numeric).abs() / denom < 1e-4,
                        "cfg {cfg} layer {layer} w{idx}: {analytic} vs {numeric}"
                    );
                    checked += 1;
                }
                for idx in 0..net.biases(layer).len() {
                    let numeric = numeric_gradient(&mut net, &x, layer, idx, true);
                    let analytic = grads.d_biases[layer][idx];
                    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
                    assert!(
                        (analytic - numeric).abs() / denom < 1e-4,
                        "cfg {cfg} layer {layer} b{idx}: {analytic} vs {numeric}"
                    );
                    checked += 1;
                }
            }

            // Input gradient against central differences.
            for i in 0..x.len() {
                let h = 1e-5;
                let mut xp = x.clone();
                xp[i] += h;
                let up = net.forward(&xp).unwrap()[0];
                xp[i] = x[i] - h;
                let dn = net.forward(&xp).unwrap()[0];
                let numeric = (up - dn) / (2.0 * h);
                let analytic = grads.d_input[i];
                let denom = analytic.abs().max(numeric.abs()).max(1e-6);
                assert!((analytic - numeric).abs() / denom < 1e-4);
            }
        }
        assert!(checked > 1000);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = substream(4, 0);
        let net = Mlp::new(&[3, 8, 8, 1], OutputActivation::Sigmoid, &mut rng).unwrap();
        let mut scratch = net.scratch();
        let mut grads = net.gradients();
        net.forward_cached(&[0.1, 0.2, 0.3], &mut scratch).unwrap();
        net.backward(&[0.1, 0.2, 0.3], &scratch, &[0.0], &mut grads).unwrap();
        assert!(grads.d_weights.iter().flatten().all(|&g| g == 0.0));
        assert!(grads.d_biases.iter().flatten().all(|&g| g == 0.0));
        assert!(grads.d_input.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn linear_single_layer_weight_gradient_is_input() {
        let net = Mlp::zeros(&[3, 1], OutputActivation::Linear).unwrap();
        let x = [0.4, -1.2, 2.5];
        let mut scratch = net.scratch();
        let mut grads = net.gradients();
        net.forward_cached(&x, &mut scratch).unwrap();
        net.backward(&x, &scratch, &[1.0], &mut grads).unwrap();
        assert_eq!(grads.d_weights[0], x.to_vec());
        assert_eq!(grads.d_biases[0], vec![1.0]);
    }

    #[test]
    fn soft_update_limits_and_midpoint() {
        let mut rng = substream(6, 0);
        let online = Mlp::new(&[2, 3, 1], OutputActivation::Linear, &mut rng).unwrap();
        let mut target = Mlp::zeros(&[2, 3, 1], OutputActivation::Linear).unwrap();

        let mut frozen = target.clone();
        soft_update(&mut frozen, &online, 0.0).unwrap();
        assert_eq!(frozen, target);

        let mut copied = target.clone();
        soft_update(&mut copied, &online, 1.0).unwrap();
        assert_eq!(copied, online);

        // tau = 0.5 on scalars 0 and 2 gives 1.
        let mut a = Mlp::zeros(&[1, 1], OutputActivation::Linear).unwrap();
        let mut b = Mlp::zeros(&[1, 1], OutputActivation::Linear).unwrap();
        b.weights_mut(0)[0] = 2.0;
        soft_update(&mut a, &b, 0.5).unwrap();
        assert_eq!(a.weights(0)[0], 1.0);

        let wrong = Mlp::zeros(&[3, 1], OutputActivation::Linear).unwrap();
        assert!(soft_update(&mut target, &wrong, 0.5).is_err());
    }

    #[test]
    fn forward_of_finite_input_is_finite() {
        let mut rng = substream(8, 0);
        let net = Mlp::new(&[3, 64, 64, 1], OutputActivation::Sigmoid, &mut rng).unwrap();
        let y = net.forward(&[1e3, -1e3, 0.0]).unwrap();
        assert!(y[0].is_finite());
        assert!(y[0] > 0.0 && y[0] < 1.0);
    }
}
