//! Small fully connected networks with hand-rolled backprop over a flat
//! f64 parameter vector, plus Adam. Flat parameters keep soft updates,
//! gradient checks and the text checkpoint format simple.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Linear => x,
        }
    }

    /// Derivative expressed in terms of the activation output.
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Linear => 1.0,
        }
    }

    fn tag(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Linear => "linear",
        }
    }

    fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "linear" => Ok(Activation::Linear),
            other => Err(Error::Parse(format!("unknown activation tag {other}"))),
        }
    }
}

/// Fully connected network. Parameters are stored flat, layer by layer,
/// each layer as a row-major (out x in) weight block followed by biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub dims: Vec<usize>,
    pub hidden_act: Activation,
    pub out_act: Activation,
    pub params: Vec<f64>,
}

/// Post-activation values per layer (input first), kept for backprop.
pub struct ForwardCache {
    pub activations: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn param_count(dims: &[usize]) -> usize {
        dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// He-uniform initialization; the output layer is scaled down so a
    /// fresh policy starts near zero actions.
    pub fn new(
        dims: Vec<usize>,
        hidden_act: Activation,
        out_act: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut params = Vec::with_capacity(Self::param_count(&dims));
        let n_layers = dims.len() - 1;
        for (li, w) in dims.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let mut bound = (6.0 / n_in as f64).sqrt();
            if li == n_layers - 1 {
                bound *= 0.01;
            }
            for _ in 0..n_in * n_out {
                params.push(rng.gen_range(-bound..bound));
            }
            for _ in 0..n_out {
                params.push(0.0);
            }
        }
        Mlp {
            dims,
            hidden_act,
            out_act,
            params,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    fn layer_offsets(&self) -> Vec<(usize, usize, usize)> {
        // (offset, n_in, n_out) per layer
        let mut out = Vec::with_capacity(self.dims.len() - 1);
        let mut off = 0;
        for w in self.dims.windows(2) {
            out.push((off, w[0], w[1]));
            off += w[0] * w[1] + w[1];
        }
        out
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.forward_cached(input).0
    }

    pub fn forward_cached(&self, input: &[f64]) -> (Vec<f64>, ForwardCache) {
        assert_eq!(input.len(), self.input_dim(), "input dim mismatch");
        let offsets = self.layer_offsets();
        let n_layers = offsets.len();
        let mut activations = Vec::with_capacity(n_layers + 1);
        activations.push(input.to_vec());
        for (li, &(off, n_in, n_out)) in offsets.iter().enumerate() {
            let act = if li == n_layers - 1 {
                self.out_act
            } else {
                self.hidden_act
            };
            let x = activations.last().unwrap();
            let mut y = vec![0.0; n_out];
            for o in 0..n_out {
                let row = &self.params[off + o * n_in..off + (o + 1) * n_in];
                let mut sum = self.params[off + n_in * n_out + o];
                for i in 0..n_in {
                    sum += row[i] * x[i];
                }
                y[o] = act.apply(sum);
            }
            activations.push(y);
        }
        let out = activations.last().unwrap().clone();
        (out, ForwardCache { activations })
    }

    /// Backprop `grad_out` (dL/d output) through the cached forward pass.
    /// Accumulates parameter gradients into `grad_params` (same layout as
    /// `params`) and returns dL/d input.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_out: &[f64],
        grad_params: &mut [f64],
    ) -> Vec<f64> {
        let offsets = self.layer_offsets();
        let n_layers = offsets.len();
        let mut delta = grad_out.to_vec();
        for li in (0..n_layers).rev() {
            let (off, n_in, n_out) = offsets[li];
            let act = if li == n_layers - 1 {
                self.out_act
            } else {
                self.hidden_act
            };
            let y = &cache.activations[li + 1];
            let x = &cache.activations[li];
            // Through the nonlinearity.
            for o in 0..n_out {
                delta[o] *= act.grad_from_output(y[o]);
            }
            let mut grad_in = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                let row_off = off + o * n_in;
                for i in 0..n_in {
                    grad_params[row_off + i] += d * x[i];
                    grad_in[i] += d * self.params[row_off + i];
                }
                grad_params[off + n_in * n_out + o] += d;
            }
            delta = grad_in;
        }
        delta
    }

    /// In-place soft update toward `live`: self = tau*live + (1-tau)*self.
    pub fn soft_update_from(&mut self, live: &Mlp, tau: f64) {
        assert_eq!(self.params.len(), live.params.len());
        for (t, l) in self.params.iter_mut().zip(&live.params) {
            *t = tau * l + (1.0 - tau) * *t;
        }
    }

    /// Serialize to the versioned text weight format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("dims");
        for d in &self.dims {
            out.push_str(&format!(" {d}"));
        }
        out.push('\n');
        out.push_str(&format!(
            "act {} {}\n",
            self.hidden_act.tag(),
            self.out_act.tag()
        ));
        out.push_str("params");
        for p in &self.params {
            out.push_str(&format!(" {p}"));
        }
        out.push('\n');
        out
    }

    /// Parse the body produced by [`Mlp::to_text`] from a token stream.
    pub fn from_tokens<'a>(tokens: &mut impl Iterator<Item = &'a str>) -> Result<Self> {
        fn expect<'a>(tokens: &mut impl Iterator<Item = &'a str>, word: &str) -> Result<()> {
            match tokens.next() {
                Some(t) if t == word => Ok(()),
                other => Err(Error::Parse(format!("expected '{word}', got {other:?}"))),
            }
        }
        expect(tokens, "dims")?;
        let mut dims = Vec::new();
        let mut act_tokens = Vec::new();
        loop {
            match tokens.next() {
                Some("act") => break,
                Some(t) => dims.push(
                    t.parse::<usize>()
                        .map_err(|e| Error::Parse(format!("bad dim {t}: {e}")))?,
                ),
                None => return Err(Error::Parse("truncated network header".into())),
            }
        }
        if dims.len() < 2 {
            return Err(Error::Parse("network needs at least two dims".into()));
        }
        for _ in 0..2 {
            act_tokens.push(
                tokens
                    .next()
                    .ok_or_else(|| Error::Parse("missing activation tags".into()))?,
            );
        }
        let hidden_act = Activation::from_tag(act_tokens[0])?;
        let out_act = Activation::from_tag(act_tokens[1])?;
        expect(tokens, "params")?;
        let count = Self::param_count(&dims);
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let t = tokens
                .next()
                .ok_or_else(|| Error::Parse("truncated parameter block".into()))?;
            params.push(
                t.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("bad weight {t}: {e}")))?,
            );
        }
        Ok(Mlp {
            dims,
            hidden_act,
            out_act,
            params,
        })
    }
}

/// Adam optimizer over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, n_params: usize) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let b1c = 1.0 - self.beta1.powi(self.t as i32);
        let b2c = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / b1c;
            let v_hat = self.v[i] / b2c;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn small_net(rng: &mut ChaCha8Rng) -> Mlp {
        Mlp::new(vec![6, 8, 5, 2], Activation::Relu, Activation::Tanh, rng)
    }

    /// Scalar loss used for gradient checking: sum of squared outputs.
    fn loss(net: &Mlp, x: &[f64]) -> f64 {
        net.forward(x).iter().map(|y| y * y).sum()
    }

    #[test]
    fn gradients_match_central_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for trial in 0..30 {
            let mut net = small_net(&mut rng);
            // Nudge weights off zero bias rows.
            for p in net.params.iter_mut() {
                *p += rng.gen_range(-0.05..0.05);
            }
            let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (out, cache) = net.forward_cached(&x);
            let grad_out: Vec<f64> = out.iter().map(|y| 2.0 * y).collect();
            let mut grads = vec![0.0; net.params.len()];
            let grad_in = net.backward(&cache, &grad_out, &mut grads);

            let h = 1e-6;
            for i in (0..net.params.len()).step_by(7) {
                let orig = net.params[i];
                net.params[i] = orig + h;
                let up = loss(&net, &x);
                net.params[i] = orig - h;
                let dn = loss(&net, &x);
                net.params[i] = orig;
                let fd = (up - dn) / (2.0 * h);
                let denom = fd.abs().max(grads[i].abs()).max(1e-6);
                assert!(
                    (fd - grads[i]).abs() / denom < 1e-4,
                    "trial {trial} param {i}: fd {fd} vs {}",
                    grads[i]
                );
            }
            // Input gradients too.
            for i in 0..x.len() {
                let mut xp = x.clone();
                xp[i] += h;
                let up = loss(&net, &xp);
                xp[i] -= 2.0 * h;
                let dn = loss(&net, &xp);
                let fd = (up - dn) / (2.0 * h);
                let denom = fd.abs().max(grad_in[i].abs()).max(1e-6);
                assert!((fd - grad_in[i]).abs() / denom < 1e-4);
            }
        }
    }

    #[test]
    fn soft_update_is_exact_contraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let live = small_net(&mut rng);
        let mut target = small_net(&mut rng);
        let before: Vec<f64> = target
            .params
            .iter()
            .zip(&live.params)
            .map(|(t, l)| t - l)
            .collect();
        let tau = 0.095;
        target.soft_update_from(&live, tau);
        for (i, (t, l)) in target.params.iter().zip(&live.params).enumerate() {
            let after = t - l;
            assert!((after - (1.0 - tau) * before[i]).abs() < 1e-15);
        }
        // tau = 1 copies the live net.
        target.soft_update_from(&live, 1.0);
        assert_eq!(target.params, live.params);
    }

    #[test]
    fn text_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = small_net(&mut rng);
        let text = net.to_text();
        let parsed = Mlp::from_tokens(&mut text.split_whitespace()).unwrap();
        assert_eq!(net, parsed);
    }

    #[test]
    fn adam_descends_quadratic() {
        let mut params = vec![5.0, -3.0];
        let mut opt = Adam::new(0.05, 2);
        for _ in 0..2000 {
            let grads: Vec<f64> = params.iter().map(|p| 2.0 * p).collect();
            opt.step(&mut params, &grads);
        }
        assert!(params.iter().all(|p| p.abs() < 1e-3), "{params:?}");
    }
}
