//! Episodic time-inhomogeneous MDP simulators with exact dynamic-programming
//! oracles.
//!
//! States and actions are indices; a state-action pair at level `h` is flattened
//! as `z = x * num_actions + a`. Transition kernels and rewards are dense
//! per-level arrays, optionally backed by a linear factorization
//! `P^h(x'|z) = <phi^h(z), mu^h(.)(x')>` and `r^h(z) = <phi^h(z), theta^h>`.
//!
//! Total reward along any trajectory stays in `[0, 1]`; generated instances
//! place all reward mass at the last level to guarantee this by construction.
//! Mean rewards depend on `(x, a)` only; next-state-dependent rewards are not
//! modeled.

use crate::linalg::norm2;
use crate::Error;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// How realized rewards are drawn given the mean table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RewardNoise {
    /// Realized reward equals the mean; variance comes only from transitions.
    #[default]
    Deterministic,
    /// Realized reward is Bernoulli with the mean as success probability.
    /// Only valid when a single level carries nonzero rewards.
    Bernoulli,
}

/// Linear factorization of the kernels and rewards.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearFeatures {
    pub dim: usize,
    /// `phi[h][z * dim + j]`, each feature vector has l2 norm <= 1.
    pub phi: Vec<Vec<f64>>,
    /// `mu[h][j * num_states + x]`, each of the `dim` rows is a distribution.
    pub mu: Vec<Vec<f64>>,
    /// `theta[h][j]`, mean-reward parameter per level.
    pub theta: Vec<Vec<f64>>,
    /// Per-level parameter norm bound `B^h`.
    pub norm_bound: Vec<f64>,
}

impl LinearFeatures {
    pub fn phi_at(&self, h: usize, z: usize) -> &[f64] {
        &self.phi[h][z * self.dim..(z + 1) * self.dim]
    }
}

/// Finite episodic MDP with per-level kernels and mean rewards.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodicMdp {
    pub horizon: usize,
    pub num_states: usize,
    pub num_actions: usize,
    /// `transitions[h][z * num_states + x_next]`, rows sum to one.
    pub transitions: Vec<Vec<f64>>,
    /// `rewards[h][z]`, mean reward in `[0, 1]`.
    pub rewards: Vec<Vec<f64>>,
    /// Initial state distribution.
    pub initial_dist: Vec<f64>,
    #[serde(default)]
    pub reward_noise: RewardNoise,
    #[serde(default)]
    pub features: Option<LinearFeatures>,
    /// Generator seed, kept for reproducibility of emitted instances.
    #[serde(default)]
    pub seed: Option<u64>,
}

/// Exact optimal value functions from backward induction.
#[derive(Debug, Clone)]
pub struct OptimalSolution {
    /// `qstar[h][z]` for `h in 0..H`.
    pub qstar: Vec<Vec<f64>>,
    /// `vstar[h][x]` for `h in 0..=H`; the last level is identically zero.
    pub vstar: Vec<Vec<f64>>,
}

impl EpisodicMdp {
    pub fn num_z(&self) -> usize {
        self.num_states * self.num_actions
    }

    #[inline]
    pub fn z_index(&self, x: usize, a: usize) -> usize {
        x * self.num_actions + a
    }

    #[inline]
    pub fn transition_row(&self, h: usize, z: usize) -> &[f64] {
        &self.transitions[h][z * self.num_states..(z + 1) * self.num_states]
    }

    /// Structural validation: kernel rows, reward range, sparse-reward bound,
    /// and (when present) the linear factorization residual.
    pub fn validate(&self) -> Result<(), Error> {
        let nz = self.num_z();
        if self.horizon == 0 || self.num_states == 0 || self.num_actions == 0 {
            return Err(Error::InvalidMdp("empty dimensions".into()));
        }
        if self.transitions.len() != self.horizon || self.rewards.len() != self.horizon {
            return Err(Error::InvalidMdp("per-level array length mismatch".into()));
        }
        let init_sum: f64 = self.initial_dist.iter().sum();
        if self.initial_dist.len() != self.num_states || (init_sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidMdp("initial distribution invalid".into()));
        }
        for h in 0..self.horizon {
            if self.transitions[h].len() != nz * self.num_states || self.rewards[h].len() != nz {
                return Err(Error::InvalidMdp(format!("level {h} shape mismatch")));
            }
            for z in 0..nz {
                let row = self.transition_row(h, z);
                if row.iter().any(|&p| p < 0.0) {
                    return Err(Error::InvalidMdp(format!(
                        "negative transition probability at h={h}, z={z}"
                    )));
                }
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidMdp(format!(
                        "row sum {s} at h={h}, z={z} differs from 1"
                    )));
                }
                let r = self.rewards[h][z];
                if !(0.0..=1.0).contains(&r) {
                    return Err(Error::InvalidMdp(format!("reward {r} outside [0,1]")));
                }
            }
        }
        // sparse reward: best achievable expected total stays within [0, 1]
        let sol = self.solve_optimal();
        let max_v = sol.vstar[0].iter().cloned().fold(0.0, f64::max);
        if max_v > 1.0 + 1e-9 {
            return Err(Error::InvalidMdp(format!(
                "max-policy expected total reward {max_v} exceeds 1"
            )));
        }
        if self.reward_noise == RewardNoise::Bernoulli {
            let levels_with_reward = (0..self.horizon)
                .filter(|&h| self.rewards[h].iter().any(|&r| r > 0.0))
                .count();
            if levels_with_reward > 1 {
                return Err(Error::InvalidMdp(
                    "bernoulli rewards require a single rewarded level".into(),
                ));
            }
        }
        if let Some(feat) = &self.features {
            let resid = self.factorization_residual(feat);
            if resid > 1e-10 {
                return Err(Error::InvalidMdp(format!(
                    "linear factorization residual {resid} exceeds 1e-10"
                )));
            }
        }
        Ok(())
    }

    /// Max absolute error of `P = Phi mu` and `r = Phi theta` over all entries.
    pub fn factorization_residual(&self, feat: &LinearFeatures) -> f64 {
        let mut worst: f64 = 0.0;
        let d = feat.dim;
        for h in 0..self.horizon {
            for z in 0..self.num_z() {
                let phi = feat.phi_at(h, z);
                for x_next in 0..self.num_states {
                    let mut p = 0.0;
                    for j in 0..d {
                        p += phi[j] * feat.mu[h][j * self.num_states + x_next];
                    }
                    worst = worst.max((p - self.transition_row(h, z)[x_next]).abs());
                }
                let mut r = 0.0;
                for j in 0..d {
                    r += phi[j] * feat.theta[h][j];
                }
                worst = worst.max((r - self.rewards[h][z]).abs());
            }
        }
        worst
    }

    /// Exact backward induction for `Q*` and `V*`.
    pub fn solve_optimal(&self) -> OptimalSolution {
        let nz = self.num_z();
        let mut qstar = vec![vec![0.0; nz]; self.horizon];
        let mut vstar = vec![vec![0.0; self.num_states]; self.horizon + 1];
        for h in (0..self.horizon).rev() {
            for x in 0..self.num_states {
                let mut best = f64::NEG_INFINITY;
                for a in 0..self.num_actions {
                    let z = self.z_index(x, a);
                    let row = self.transition_row(h, z);
                    let mut q = self.rewards[h][z];
                    for (x_next, p) in row.iter().enumerate() {
                        q += p * vstar[h + 1][x_next];
                    }
                    qstar[h][z] = q;
                    if q > best {
                        best = q;
                    }
                }
                vstar[h][x] = best;
            }
        }
        OptimalSolution { qstar, vstar }
    }

    /// Exact conditional mean and variance of `r^h + f(x^{h+1})` given `z`.
    ///
    /// `f_next` holds the value of `f` at every state of level `h+1`.
    pub fn true_conditional(&self, f_next: &[f64], h: usize, z: usize) -> (f64, f64) {
        let row = self.transition_row(h, z);
        let r_mean = self.rewards[h][z];
        let mut ef = 0.0;
        let mut ef2 = 0.0;
        for (x_next, p) in row.iter().enumerate() {
            ef += p * f_next[x_next];
            ef2 += p * f_next[x_next] * f_next[x_next];
        }
        let r_var = match self.reward_noise {
            RewardNoise::Deterministic => 0.0,
            RewardNoise::Bernoulli => r_mean * (1.0 - r_mean),
        };
        let mean = r_mean + ef;
        // reward and next state are independent given z
        let var = r_var + (ef2 - ef * ef).max(0.0);
        (mean, var)
    }

    /// Exact value of the prefix-dependent exploration policy: act greedily on
    /// `f1` until the first level where `f1^h(x) < f2^h(x) - u`, then greedily
    /// on `f2` for the rest of the episode. Dynamic programming over the
    /// augmented state `(x, switched)`.
    ///
    /// `f1` and `f2` are per-level Q-tables indexed by `z`.
    pub fn evaluate_exploration_policy(&self, f1: &[Vec<f64>], f2: &[Vec<f64>], u: f64) -> f64 {
        let mut w_switched = vec![0.0; self.num_states];
        let mut w_plain = vec![0.0; self.num_states];
        for h in (0..self.horizon).rev() {
            let mut next_switched = vec![0.0; self.num_states];
            let mut next_plain = vec![0.0; self.num_states];
            for x in 0..self.num_states {
                let a2 = argmax_action(&f2[h], x, self.num_actions);
                let z2 = self.z_index(x, a2);
                next_switched[x] = self.expected_step(h, z2, &w_switched);
                let f1x = max_over_actions(&f1[h], x, self.num_actions);
                let f2x = max_over_actions(&f2[h], x, self.num_actions);
                if f1x >= f2x - u {
                    let a1 = argmax_action(&f1[h], x, self.num_actions);
                    let z1 = self.z_index(x, a1);
                    next_plain[x] = self.expected_step(h, z1, &w_plain);
                } else {
                    next_plain[x] = self.expected_step(h, z2, &w_switched);
                }
            }
            w_switched = next_switched;
            w_plain = next_plain;
        }
        self.initial_dist
            .iter()
            .zip(&w_plain)
            .map(|(p, v)| p * v)
            .sum()
    }

    fn expected_step(&self, h: usize, z: usize, v_next: &[f64]) -> f64 {
        let mut acc = self.rewards[h][z];
        for (x_next, p) in self.transition_row(h, z).iter().enumerate() {
            acc += p * v_next[x_next];
        }
        acc
    }

    /// Exact value of a deterministic Markov policy `policy[h][x] -> a`.
    pub fn evaluate_policy(&self, policy: &[Vec<usize>]) -> f64 {
        let mut v = vec![0.0; self.num_states];
        for h in (0..self.horizon).rev() {
            let mut next = vec![0.0; self.num_states];
            for x in 0..self.num_states {
                let z = self.z_index(x, policy[h][x]);
                next[x] = self.expected_step(h, z, &v);
            }
            v = next;
        }
        self.initial_dist.iter().zip(&v).map(|(p, v)| p * v).sum()
    }

    /// Exact value of the uniform-random policy.
    pub fn uniform_policy_value(&self) -> f64 {
        let mut v = vec![0.0; self.num_states];
        let inv_a = 1.0 / self.num_actions as f64;
        for h in (0..self.horizon).rev() {
            let mut next = vec![0.0; self.num_states];
            for x in 0..self.num_states {
                let mut acc = 0.0;
                for a in 0..self.num_actions {
                    acc += self.expected_step(h, self.z_index(x, a), &v);
                }
                next[x] = acc * inv_a;
            }
            v = next;
        }
        self.initial_dist.iter().zip(&v).map(|(p, v)| p * v).sum()
    }

    /// Expected optimal value at the initial distribution.
    pub fn optimal_value(&self, sol: &OptimalSolution) -> f64 {
        self.initial_dist
            .iter()
            .zip(&sol.vstar[0])
            .map(|(p, v)| p * v)
            .sum()
    }

    /// Law-of-total-variance sum for the optimal greedy policy:
    /// `E[sum_h Var[r^h + V*^{h+1}(x') | z^h]]` under the optimal policy's
    /// state distribution. Bounded by 1 for any valid sparse-reward instance.
    pub fn ltv_optimal(&self, sol: &OptimalSolution) -> f64 {
        let mut occupancy = self.initial_dist.clone();
        let mut total = 0.0;
        for h in 0..self.horizon {
            let mut next_occ = vec![0.0; self.num_states];
            for x in 0..self.num_states {
                if occupancy[x] == 0.0 {
                    continue;
                }
                let a = argmax_action(&sol.qstar[h], x, self.num_actions);
                let z = self.z_index(x, a);
                let (_, var) = self.true_conditional(&sol.vstar[h + 1], h, z);
                total += occupancy[x] * var;
                for (x_next, p) in self.transition_row(h, z).iter().enumerate() {
                    next_occ[x_next] += occupancy[x] * p;
                }
            }
            occupancy = next_occ;
        }
        total
    }

    pub fn sample_initial(&self, rng: &mut ChaCha8Rng) -> usize {
        sample_categorical(&self.initial_dist, rng)
    }

    pub fn sample_next_state(&self, h: usize, z: usize, rng: &mut ChaCha8Rng) -> usize {
        sample_categorical(self.transition_row(h, z), rng)
    }

    pub fn sample_reward(&self, h: usize, z: usize, rng: &mut ChaCha8Rng) -> f64 {
        let mean = self.rewards[h][z];
        match self.reward_noise {
            RewardNoise::Deterministic => mean,
            RewardNoise::Bernoulli => {
                if rng.gen::<f64>() < mean {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Attach one-hot features (`d = |X||A|`), making any tabular instance an
    /// exactly factored linear one.
    pub fn attach_one_hot_features(&mut self) {
        let nz = self.num_z();
        let mut phi = Vec::with_capacity(self.horizon);
        let mut mu = Vec::with_capacity(self.horizon);
        let mut theta = Vec::with_capacity(self.horizon);
        let mut norm_bound = Vec::with_capacity(self.horizon);
        for h in 0..self.horizon {
            let mut phi_h = vec![0.0; nz * nz];
            for z in 0..nz {
                phi_h[z * nz + z] = 1.0;
            }
            // row j of mu is the transition row of pair j
            let mu_h = self.transitions[h].clone();
            let theta_h = self.rewards[h].clone();
            let mu_sum: Vec<f64> = (0..nz)
                .map(|_| 1.0) // each mu row sums to one
                .collect();
            let b = norm2(&mu_sum) + norm2(&theta_h);
            phi.push(phi_h);
            mu.push(mu_h);
            theta.push(theta_h);
            norm_bound.push(b.max(1.0));
        }
        self.features = Some(LinearFeatures {
            dim: nz,
            phi,
            mu,
            theta,
            norm_bound,
        });
    }
}

#[inline]
pub fn max_over_actions(table: &[f64], x: usize, num_actions: usize) -> f64 {
    let base = x * num_actions;
    let mut best = table[base];
    for a in 1..num_actions {
        if table[base + a] > best {
            best = table[base + a];
        }
    }
    best
}

/// Argmax over actions with lowest-index tie-breaking.
#[inline]
pub fn argmax_action(table: &[f64], x: usize, num_actions: usize) -> usize {
    let base = x * num_actions;
    let mut best_a = 0;
    let mut best = table[base];
    for a in 1..num_actions {
        if table[base + a] > best {
            best = table[base + a];
            best_a = a;
        }
    }
    best_a
}

fn sample_categorical(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn random_simplex_point(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    // normalized unit-rate exponentials give a uniform Dirichlet draw
    let mut v: Vec<f64> = (0..dim)
        .map(|_| -rng.gen::<f64>().max(1e-12).ln())
        .collect();
    let s: f64 = v.iter().sum();
    for x in v.iter_mut() {
        *x /= s;
    }
    v
}

/// Generate a valid linear MDP: simplex feature vectors, row-stochastic
/// measure matrices, rewards only at the last level via
/// `r^H(z) = <phi^H(z), theta^H>` with `theta^H` in the unit cube.
pub fn gen_linear_mdp(
    d: usize,
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    seed: u64,
) -> Result<EpisodicMdp, Error> {
    if d == 0 || horizon == 0 || num_states < 2 || num_actions < 2 {
        return Err(Error::InvalidConfig(
            "need d >= 1, horizon >= 1, at least 2 states and 2 actions".into(),
        ));
    }
    if d > num_states * num_actions {
        return Err(Error::InvalidConfig(format!(
            "feature dimension {d} exceeds |X||A| = {}",
            num_states * num_actions
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nz = num_states * num_actions;
    let mut transitions = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    let mut phi = Vec::with_capacity(horizon);
    let mut mu = Vec::with_capacity(horizon);
    let mut theta = Vec::with_capacity(horizon);
    let mut norm_bound = Vec::with_capacity(horizon);
    for h in 0..horizon {
        let mut phi_h = vec![0.0; nz * d];
        for z in 0..nz {
            let p = random_simplex_point(d, &mut rng);
            phi_h[z * d..(z + 1) * d].copy_from_slice(&p);
        }
        let mut mu_h = vec![0.0; d * num_states];
        for j in 0..d {
            let row = random_simplex_point(num_states, &mut rng);
            mu_h[j * num_states..(j + 1) * num_states].copy_from_slice(&row);
        }
        let theta_h: Vec<f64> = if h + 1 == horizon {
            (0..d).map(|_| rng.gen::<f64>()).collect()
        } else {
            vec![0.0; d]
        };
        let mut trans_h = vec![0.0; nz * num_states];
        let mut rew_h = vec![0.0; nz];
        for z in 0..nz {
            let pz = &phi_h[z * d..(z + 1) * d];
            for x_next in 0..num_states {
                let mut p = 0.0;
                for j in 0..d {
                    p += pz[j] * mu_h[j * num_states + x_next];
                }
                trans_h[z * num_states + x_next] = p;
            }
            // renormalize the row exactly to absorb float round-off
            let s: f64 = trans_h[z * num_states..(z + 1) * num_states].iter().sum();
            for x_next in 0..num_states {
                trans_h[z * num_states + x_next] /= s;
            }
            let mut r = 0.0;
            for j in 0..d {
                r += pz[j] * theta_h[j];
            }
            rew_h[z] = r.clamp(0.0, 1.0);
        }
        let mu_row_sums: Vec<f64> = (0..d)
            .map(|j| mu_h[j * num_states..(j + 1) * num_states].iter().sum())
            .collect();
        let b = (norm2(&mu_row_sums) + norm2(&theta_h)).max(1.0);
        transitions.push(trans_h);
        rewards.push(rew_h);
        phi.push(phi_h);
        mu.push(mu_h);
        theta.push(theta_h);
        norm_bound.push(b);
    }
    let initial_dist = random_simplex_point(num_states, &mut rng);
    let mdp = EpisodicMdp {
        horizon,
        num_states,
        num_actions,
        transitions,
        rewards,
        initial_dist,
        reward_noise: RewardNoise::Deterministic,
        features: Some(LinearFeatures {
            dim: d,
            phi,
            mu,
            theta,
            norm_bound,
        }),
        seed: Some(seed),
    };
    mdp.validate()?;
    Ok(mdp)
}

/// Generate a random tabular MDP (Dirichlet kernels, rewards only at the last
/// level) without a linear factorization.
pub fn gen_tabular_mdp(
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    seed: u64,
) -> Result<EpisodicMdp, Error> {
    if horizon == 0 || num_states < 2 || num_actions < 2 {
        return Err(Error::InvalidConfig(
            "need horizon >= 1, at least 2 states and 2 actions".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nz = num_states * num_actions;
    let mut transitions = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    for h in 0..horizon {
        let mut trans_h = vec![0.0; nz * num_states];
        for z in 0..nz {
            let row = random_simplex_point(num_states, &mut rng);
            trans_h[z * num_states..(z + 1) * num_states].copy_from_slice(&row);
        }
        let rew_h: Vec<f64> = if h + 1 == horizon {
            (0..nz).map(|_| rng.gen::<f64>()).collect()
        } else {
            vec![0.0; nz]
        };
        transitions.push(trans_h);
        rewards.push(rew_h);
    }
    let initial_dist = random_simplex_point(num_states, &mut rng);
    let mdp = EpisodicMdp {
        horizon,
        num_states,
        num_actions,
        transitions,
        rewards,
        initial_dist,
        reward_noise: RewardNoise::Deterministic,
        features: None,
        seed: Some(seed),
    };
    mdp.validate()?;
    Ok(mdp)
}
