//! Twin-delayed deep deterministic policy gradient over the flat-vector
//! networks in [`super::net`].

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::net::{Activation, Adam, Mlp};
use super::replay::Transition;
use crate::error::{Error, Result};
use crate::observation::GRID_LEN;

pub const ACTION_DIM: usize = 2;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Td3Config {
    pub state_dim: usize,
    pub hidden: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub gamma: f64,
    pub tau: f64,
    pub exploration_noise: f64,
    pub target_noise: f64,
    pub target_noise_clip: f64,
    pub policy_delay: u64,
}

impl Default for Td3Config {
    fn default() -> Self {
        Td3Config {
            state_dim: GRID_LEN,
            hidden: 256,
            lr: 1e-4,
            batch_size: 10,
            gamma: 0.9,
            tau: 0.095,
            exploration_noise: 0.1,
            target_noise: 0.2,
            target_noise_clip: 0.5,
            policy_delay: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Td3Agent {
    pub config: Td3Config,
    pub actor: Mlp,
    pub actor_target: Mlp,
    pub critic1: Mlp,
    pub critic2: Mlp,
    pub critic1_target: Mlp,
    pub critic2_target: Mlp,
    actor_opt: Adam,
    critic1_opt: Adam,
    critic2_opt: Adam,
    pub update_count: u64,
}

impl Td3Agent {
    pub fn new(config: Td3Config, rng: &mut ChaCha8Rng) -> Self {
        let actor_dims = vec![config.state_dim, config.hidden, config.hidden, ACTION_DIM];
        let critic_dims = vec![
            config.state_dim + ACTION_DIM,
            config.hidden,
            config.hidden,
            1,
        ];
        let actor = Mlp::new(actor_dims, Activation::Relu, Activation::Tanh, rng);
        let critic1 = Mlp::new(
            critic_dims.clone(),
            Activation::Relu,
            Activation::Linear,
            rng,
        );
        let critic2 = Mlp::new(critic_dims, Activation::Relu, Activation::Linear, rng);
        let actor_opt = Adam::new(config.lr, actor.params.len());
        let critic1_opt = Adam::new(config.lr, critic1.params.len());
        let critic2_opt = Adam::new(config.lr, critic2.params.len());
        Td3Agent {
            config,
            actor_target: actor.clone(),
            critic1_target: critic1.clone(),
            critic2_target: critic2.clone(),
            actor,
            critic1,
            critic2,
            actor_opt,
            critic1_opt,
            critic2_opt,
            update_count: 0,
        }
    }

    /// Deterministic policy output, optionally with exploration noise.
    pub fn select_action(&self, state: &[f64], rng: Option<&mut ChaCha8Rng>) -> [f64; 2] {
        let out = self.actor.forward(state);
        let mut a = [out[0], out[1]];
        if let Some(rng) = rng {
            for v in &mut a {
                *v = (*v + gaussian(rng) * self.config.exploration_noise).clamp(-1.0, 1.0);
            }
        }
        a
    }

    fn q(&self, critic: &Mlp, state: &[f64], action: &[f64; 2]) -> f64 {
        let mut input = Vec::with_capacity(state.len() + ACTION_DIM);
        input.extend_from_slice(state);
        input.extend_from_slice(action);
        critic.forward(&input)[0]
    }

    /// One gradient update on a sampled batch. Returns (critic loss,
    /// actor loss if this was a delayed policy step).
    pub fn update(
        &mut self,
        batch: &[&Transition],
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, Option<f64>)> {
        assert!(!batch.is_empty());
        self.update_count += 1;
        let n = batch.len() as f64;
        let clip = self.config.target_noise_clip;

        // Targets with smoothed target-policy actions.
        let mut targets = Vec::with_capacity(batch.len());
        for t in batch {
            let mut a = self.actor_target.forward(&t.next_state);
            for v in a.iter_mut() {
                let noise = (gaussian(rng) * self.config.target_noise).clamp(-clip, clip);
                *v = (*v + noise).clamp(-1.0, 1.0);
            }
            let a = [a[0], a[1]];
            let q1 = self.q(&self.critic1_target, &t.next_state, &a);
            let q2 = self.q(&self.critic2_target, &t.next_state, &a);
            let not_done = if t.done { 0.0 } else { 1.0 };
            let discount = self.config.gamma.powi(t.steps as i32);
            targets.push(t.reward + discount * not_done * q1.min(q2));
        }

        // Critic regression toward the shared targets.
        let mut critic_loss = 0.0;
        let mut g1 = vec![0.0; self.critic1.params.len()];
        let mut g2 = vec![0.0; self.critic2.params.len()];
        for (t, &y) in batch.iter().zip(&targets) {
            let mut input = Vec::with_capacity(t.state.len() + ACTION_DIM);
            input.extend_from_slice(&t.state);
            input.extend_from_slice(&t.action);
            for (critic, grads) in [(&self.critic1, &mut g1), (&self.critic2, &mut g2)] {
                let (out, cache) = critic.forward_cached(&input);
                let err = out[0] - y;
                critic_loss += err * err / (2.0 * n);
                critic.backward(&cache, &[2.0 * err / n], grads);
            }
        }
        if !critic_loss.is_finite() {
            return Err(Error::Numeric(format!(
                "critic loss diverged at update {}",
                self.update_count
            )));
        }
        self.critic1_opt.step(&mut self.critic1.params, &g1);
        self.critic2_opt.step(&mut self.critic2.params, &g2);

        // Delayed policy and target updates.
        let mut actor_loss = None;
        if self.update_count % self.config.policy_delay == 0 {
            let mut ga = vec![0.0; self.actor.params.len()];
            let mut loss = 0.0;
            let mut scratch = vec![0.0; self.critic1.params.len()];
            for t in batch {
                let (a, actor_cache) = self.actor.forward_cached(&t.state);
                let mut input = Vec::with_capacity(t.state.len() + ACTION_DIM);
                input.extend_from_slice(&t.state);
                input.extend_from_slice(&a);
                let (q, critic_cache) = self.critic1.forward_cached(&input);
                loss -= q[0] / n;
                // dL/d action flows through the critic input tail.
                scratch.iter_mut().for_each(|g| *g = 0.0);
                let grad_in = self.critic1.backward(&critic_cache, &[-1.0 / n], &mut scratch);
                let grad_action = &grad_in[t.state.len()..];
                self.actor.backward(&actor_cache, grad_action, &mut ga);
            }
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "actor loss diverged at update {}",
                    self.update_count
                )));
            }
            self.actor_opt.step(&mut self.actor.params, &ga);
            let tau = self.config.tau;
            self.actor_target.soft_update_from(&self.actor, tau);
            self.critic1_target.soft_update_from(&self.critic1, tau);
            self.critic2_target.soft_update_from(&self.critic2, tau);
            actor_loss = Some(loss);
        }
        Ok((critic_loss, actor_loss))
    }

    /// Versioned text checkpoint of the live networks. Target networks are
    /// reconstructed as copies on load and optimizer state starts fresh.
    pub fn checkpoint_text(&self) -> String {
        let mut out = String::from("evoscen-td3 v1\n");
        for (name, net) in [
            ("actor", &self.actor),
            ("critic1", &self.critic1),
            ("critic2", &self.critic2),
        ] {
            out.push_str(&format!("net {name}\n"));
            out.push_str(&net.to_text());
        }
        out
    }

    pub fn from_checkpoint_text(text: &str, config: Td3Config) -> Result<Self> {
        let mut tokens = text.split_whitespace();
        for word in ["evoscen-td3", "v1"] {
            match tokens.next() {
                Some(t) if t == word => {}
                other => {
                    return Err(Error::Parse(format!(
                        "bad checkpoint header: expected {word}, got {other:?}"
                    )))
                }
            }
        }
        let mut nets = Vec::new();
        for name in ["actor", "critic1", "critic2"] {
            match (tokens.next(), tokens.next()) {
                (Some("net"), Some(t)) if t == name => {}
                other => {
                    return Err(Error::Parse(format!(
                        "expected 'net {name}', got {other:?}"
                    )))
                }
            }
            nets.push(Mlp::from_tokens(&mut tokens)?);
        }
        let critic2 = nets.pop().unwrap();
        let critic1 = nets.pop().unwrap();
        let actor = nets.pop().unwrap();
        if actor.input_dim() != config.state_dim
            || critic1.input_dim() != config.state_dim + ACTION_DIM
        {
            return Err(Error::Parse(
                "checkpoint network dims do not match config".into(),
            ));
        }
        let actor_opt = Adam::new(config.lr, actor.params.len());
        let critic1_opt = Adam::new(config.lr, critic1.params.len());
        let critic2_opt = Adam::new(config.lr, critic2.params.len());
        Ok(Td3Agent {
            config,
            actor_target: actor.clone(),
            critic1_target: critic1.clone(),
            critic2_target: critic2.clone(),
            actor,
            critic1,
            critic2,
            actor_opt,
            critic1_opt,
            critic2_opt,
            update_count: 0,
        })
    }
}

/// Standard normal draw via Box-Muller.
pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
