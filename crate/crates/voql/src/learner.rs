//! Variance-weighted optimistic Q-learning.
//!
//! Each episode (from the second on) runs a backward pass per level:
//! weighted regression for the optimistic value, unweighted regressions for
//! the overly optimistic / overly pessimistic values and the second moment,
//! bonuses from the configured oracle wrapped in a running pointwise-min
//! envelope. The rollout follows the prefix-greedy rule (optimistic argmax
//! until the optimistic and overly optimistic state values separate by more
//! than `u_t`, then overly optimistic argmax) and appends the visited pairs
//! with their variance-based regression weights.

use crate::bonus::{
    elliptical_bonus_from_ctx, enforce_consistency, sensitivity_update, subsample_bonus, vs_bonus,
    BonusFn, SubsampledSet,
};
use crate::eluder::UncertaintyContext;
use crate::env::{argmax_action, max_over_actions, EpisodicMdp};
use crate::fclass::{
    clip_compose, finish_linear_fit, weighted_regression, Fit, FunctionClass, LevelDataset,
};
use crate::harness::RegretRecord;
use crate::Error;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Which bonus oracle backs the confidence bonuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BonusOracle {
    /// Exact version-space supremum by enumeration (finite classes).
    VersionSpace,
    /// Elliptical bonus from the weighted covariance (linear classes).
    Elliptical,
    /// Version-space supremum over an online sensitivity subsample.
    Subsample,
}

/// Target plugged into the second-moment regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SecondMomentTarget {
    /// `(r + f_{t,1}^{h+1}(x'))^2`, the form the confidence analysis uses.
    #[default]
    Optimistic,
    /// `(r + f_{t,2}^{h+1}(x'))^2` variant.
    OverOptimistic,
}

/// Hypothesis classes per level: the main class fits value targets, the
/// second-moment class fits squared targets with an enlarged range.
#[derive(Debug, Clone)]
pub struct ClassSetup {
    pub main: Vec<FunctionClass>,
    pub second: Vec<FunctionClass>,
}

/// All schedule constants. Radii are non-decreasing in the episode index and
/// scaled by `c_scale` (1 = theory constants).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VoqlParams {
    pub episodes: usize,
    pub horizon: usize,
    pub delta: f64,
    pub alpha: f64,
    pub lambda: f64,
    /// Model misspecification bound fed into the radius schedules.
    pub eps: f64,
    /// Bonus oracle error parameter.
    pub eps_b: f64,
    /// Range bound `L` of the main classes.
    pub range: f64,
    /// Global multiplier on every radius and threshold (1 = theory mode).
    pub c_scale: f64,
    /// Multiplier on the switching-threshold schedule, which is normalized
    /// so that `u_1 = 2` at `c_u = 1`.
    pub c_u: f64,
    pub log_n: f64,
    pub log_nb: f64,
    pub d_alpha: f64,
    /// Sensitivity-subsampling constant `C >= 1`.
    pub c_sens: f64,
    pub second_moment_target: SecondMomentTarget,
}

impl VoqlParams {
    /// Derive the full schedule for a class setup and oracle choice.
    /// `alpha = sqrt(1/TH)` and `lambda = 1` unless overridden later.
    pub fn derive(
        episodes: usize,
        horizon: usize,
        delta: f64,
        eps: f64,
        eps_b: f64,
        c_scale: f64,
        c_u: f64,
        classes: &ClassSetup,
        oracle: BonusOracle,
    ) -> Result<Self, Error> {
        if episodes == 0 || horizon == 0 {
            return Err(Error::InvalidConfig(
                "episodes and horizon must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&delta) || delta == 0.0 {
            return Err(Error::InvalidConfig("delta must lie in (0, 1)".into()));
        }
        let t = episodes as f64;
        let h = horizon as f64;
        let alpha = (1.0 / (t * h)).sqrt();
        let lambda = 1.0;
        let range = classes.main.iter().map(|c| c.range).fold(1.0f64, f64::max);
        let log_n = classes
            .main
            .iter()
            .chain(classes.second.iter())
            .map(|c| c.log_size())
            .fold(0.0f64, f64::max);
        let d_alpha = classes
            .main
            .iter()
            .map(|c| dim_estimate(c, alpha, t, lambda, log_n))
            .sum::<f64>()
            / h;
        let mut params = VoqlParams {
            episodes,
            horizon,
            delta,
            alpha,
            lambda,
            eps,
            eps_b,
            range,
            c_scale,
            c_u,
            log_n,
            log_nb: 0.0,
            d_alpha,
            c_sens: 1.0,
            second_moment_target: SecondMomentTarget::default(),
        };
        params.log_nb = log_nb_estimate(&params, classes, oracle);
        Ok(params)
    }

    fn delta_th(&self) -> f64 {
        self.delta / ((self.episodes as f64 + 1.0) * (self.horizon as f64 + 1.0))
    }

    fn log_cover_terms(&self, inner_a: f64, inner_b: f64) -> f64 {
        // ln((2 ln(a) + 2)(ln(b) + 2)) for the union-bound grid factors
        let la = (2.0 * inner_a.ln().max(0.0) + 2.0).ln();
        let lb = (inner_b.ln().max(0.0) + 2.0).ln();
        la + lb
    }

    /// Deviation multiplier for the optimistic weighted regression.
    pub fn upsilon(&self) -> f64 {
        let t = self.episodes as f64;
        let l = self.range;
        let inner = 2.0 * self.log_n
            + self.log_cover_terms(
                4.0 * l * t / self.alpha,
                8.0 * l / (self.alpha * self.alpha),
            )
            - self.delta_th().ln();
        self.c_scale * inner.max(0.0).sqrt()
    }

    /// Deviation multiplier shared by the weight rule's gap and uncertainty
    /// terms.
    pub fn iota(&self) -> f64 {
        let t = self.episodes as f64;
        let l = self.range;
        let inner = self.log_n
            + self.log_nb
            + self.log_cover_terms(
                4.0 * l * t / self.alpha,
                8.0 * l / (self.alpha * self.alpha),
            )
            - self.delta_th().ln();
        self.c_scale * 3.0 * inner.max(0.0).sqrt()
    }

    /// Radius of the optimistic (weighted) confidence set at episode `t`.
    pub fn beta1(&self, t: usize) -> f64 {
        let tt = self.episodes as f64;
        let l = self.range;
        let log_term = 2.0 * self.log_n
            + ((self.episodes as f64 + 1.0) * (self.horizon as f64 + 1.0)).ln()
            + self.log_cover_terms(
                4.0 * l * tt / self.alpha,
                8.0 * l / (self.alpha * self.alpha),
            )
            - self.delta.ln();
        let misfit = (8.0 * t as f64 * l * self.eps / (self.alpha * self.alpha)).sqrt();
        self.c_scale
            * ((6.0 * self.lambda.sqrt() + 156.0).sqrt() * log_term.max(0.0).sqrt() + misfit)
    }

    fn iota_dot(&self) -> f64 {
        let t = self.episodes as f64;
        let l = self.range;
        let inner = self.log_n + self.log_nb + self.log_cover_terms(18.0 * l * t, 18.0 * l)
            - self.delta_th().ln();
        (2.0 * inner.max(0.0)).sqrt()
    }

    /// Radius of the overly optimistic / pessimistic (unweighted) sets.
    pub fn beta2(&self, t: usize) -> f64 {
        let l = self.range;
        let id = self.iota_dot();
        self.c_scale * (2.0 * (24.0 * l + 21.0) * id * id + 20.0 * t as f64 * l * self.eps).sqrt()
    }

    fn iota_prime(&self) -> f64 {
        let t = self.episodes as f64;
        let l = self.range;
        let inner = self.log_n + self.log_nb + self.log_cover_terms(32.0 * l * t, 32.0 * l)
            - self.delta_th().ln();
        (2.0 * inner.max(0.0)).sqrt()
    }

    /// Radius of the second-moment confidence set.
    pub fn beta_bar(&self, t: usize) -> f64 {
        let l = self.range;
        let ip = self.iota_prime();
        self.c_scale * (8.0 * (11.0 * l + 9.0) * ip * ip + 32.0 * t as f64 * l * self.eps).sqrt()
    }

    fn u_raw(&self, t: usize) -> f64 {
        let tt = self.episodes as f64;
        let h = self.horizon as f64;
        let log_a = (self.log_n
            + (tt * h / (self.alpha * self.delta)).ln()
            + tt * self.eps / (self.alpha * self.alpha))
            .max(0.0);
        let log_b = self.log_n + self.log_nb + (tt * h / (self.alpha * self.delta)).ln();
        let st = (t as f64).sqrt();
        log_a.sqrt() * (log_b * h.powf(2.5) * self.d_alpha.sqrt() + st * h * self.eps_b) / st
            + h * h * self.eps
            + h * self.delta
    }

    /// Switching threshold at episode `t`: the theory schedule's shape with
    /// its scale pinned to `u_1 = 2` at `c_u = 1`.
    pub fn u(&self, t: usize) -> f64 {
        let base = self.u_raw(1);
        if base > 0.0 {
            self.c_u * 2.0 * self.u_raw(t) / base
        } else {
            self.c_u * 2.0
        }
    }

    /// Self-checks on the schedule: positive floor, non-decreasing radii.
    pub fn validate(&self) -> Result<(), Error> {
        if self.alpha <= 0.0 || self.lambda <= 0.0 {
            return Err(Error::InvalidConfig(
                "alpha and lambda must be positive".into(),
            ));
        }
        let mut prev = (0.0, 0.0, 0.0);
        for t in 1..=self.episodes {
            let cur = (self.beta1(t), self.beta2(t), self.beta_bar(t));
            if cur.0 + 1e-12 < prev.0 || cur.1 + 1e-12 < prev.1 || cur.2 + 1e-12 < prev.2 {
                return Err(Error::InvalidConfig(format!(
                    "radius schedule decreases at episode {t}"
                )));
            }
            prev = cur;
        }
        Ok(())
    }
}

/// Generalized-Eluder-dimension estimate for scheduling: the log-det bound
/// for linear classes, `log N` as the standard finite-class surrogate.
fn dim_estimate(class: &FunctionClass, alpha: f64, t: f64, lambda: f64, log_n: f64) -> f64 {
    match &class.repr {
        crate::fclass::ClassRepr::Linear {
            dim, ball_radius, ..
        } => {
            let d = *dim as f64;
            d * (1.0 + ball_radius * ball_radius * t / (alpha * alpha * d * lambda)).ln()
        }
        crate::fclass::ClassRepr::FiniteTable { .. } => log_n.max(1.0),
    }
}

/// Log-size of the bonus function class, per oracle. The elliptical form
/// depends on the largest radius, which itself depends on this value, so it
/// is resolved by a short fixed-point iteration.
fn log_nb_estimate(params: &VoqlParams, classes: &ClassSetup, oracle: BonusOracle) -> f64 {
    let t = params.episodes as f64;
    match oracle {
        BonusOracle::VersionSpace => params.log_n + t.ln(),
        BonusOracle::Subsample => {
            let nz = classes.main.first().map(|c| c.num_z).unwrap_or(1) as f64;
            let dim = params.d_alpha.max(1.0);
            dim * (t * params.log_n.exp().max(2.0) / params.delta)
                .ln()
                .max(1.0)
                * (t * nz / params.delta).ln().max(1.0)
        }
        BonusOracle::Elliptical => {
            let (d, eps_c) = classes
                .main
                .iter()
                .find_map(|c| match &c.repr {
                    crate::fclass::ClassRepr::Linear { dim, eps_c, .. } => {
                        Some((*dim as f64, *eps_c))
                    }
                    _ => None,
                })
                .unwrap_or((1.0, 1e-3));
            let mut trial = params.clone();
            trial.log_nb = 1.0;
            for _ in 0..8 {
                let beta_max = trial
                    .beta1(params.episodes)
                    .max(trial.beta2(params.episodes))
                    .max(trial.beta_bar(params.episodes))
                    .max(1.0);
                trial.log_nb = d
                    * d
                    * (1.0 + d.sqrt() * beta_max * beta_max / (params.lambda * eps_c * eps_c)).ln();
            }
            trial.log_nb
        }
    }
}

/// Per-episode artifacts kept by the learner.
#[derive(Debug, Clone)]
pub struct VoqlState {
    pub episode: usize,
    pub f1: Vec<Vec<f64>>,
    pub f2: Vec<Vec<f64>>,
    pub fm2: Vec<Vec<f64>>,
    pub fhat1: Vec<Vec<f64>>,
    pub fhat2: Vec<Vec<f64>>,
    pub fhatm2: Vec<Vec<f64>>,
    pub ghat: Vec<Vec<f64>>,
    pub b1: Vec<Option<BonusFn>>,
    pub b2: Vec<Option<BonusFn>>,
    /// First level (1-based) where the episode switched to the overly
    /// optimistic greedy; `horizon + 1` when it never did.
    pub switch_level: usize,
}

/// Everything logged at one visited state-action pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VisitLog {
    pub level: usize,
    pub z: usize,
    pub sigma: f64,
    pub sigma_bar: f64,
    pub d_unit: f64,
    pub d_weighted: f64,
    pub gap: f64,
    pub ghat_at_z: f64,
    pub fhat_m2_at_z: f64,
}

/// Per-episode snapshot for the audit checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub u: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta_bar: f64,
    pub f1: Vec<Vec<f64>>,
    pub f2: Vec<Vec<f64>>,
    pub fm2: Vec<Vec<f64>>,
    /// Enveloped bonus tables per level (empty before the first backward pass).
    pub b1: Vec<Vec<f64>>,
    pub b2: Vec<Vec<f64>>,
    pub visits: Vec<VisitLog>,
}

/// Full run log consumed by the audit module.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunLog {
    pub episodes: Vec<EpisodeLog>,
    /// Worst realized gap between the best class member and the exact
    /// conditional-expectation target, per level (only filled when logging).
    pub realized_completeness: Vec<f64>,
    /// Schedule the run used, for offline replay of the audits.
    #[serde(default)]
    pub params: Option<VoqlParams>,
}

/// Result of one seeded run.
#[derive(Debug)]
pub struct RunOutput {
    pub records: Vec<RegretRecord>,
    pub log: Option<RunLog>,
    /// Count of grid points where a raw bonus rose above its envelope.
    pub raw_consistency_violations: usize,
    /// Per-level distinct subsample counts at the end (subsample oracle).
    pub subsample_distinct: Option<Vec<usize>>,
}

/// The learner: owns the per-level datasets, uncertainty contexts, and the
/// current episode's value tables.
pub struct Voql<'a> {
    mdp: &'a EpisodicMdp,
    classes: &'a ClassSetup,
    oracle: BonusOracle,
    params: VoqlParams,
    pub state: VoqlState,
    datasets: Vec<LevelDataset>,
    weighted_ctx: Vec<UncertaintyContext>,
    unit_ctx: Vec<UncertaintyContext>,
    sub_weighted: Option<Vec<SubsampledSet>>,
    sub_unit: Option<Vec<SubsampledSet>>,
    raw_violations: usize,
}

impl<'a> Voql<'a> {
    pub fn new(
        mdp: &'a EpisodicMdp,
        classes: &'a ClassSetup,
        oracle: BonusOracle,
        params: VoqlParams,
    ) -> Result<Self, Error> {
        let h = mdp.horizon;
        if classes.main.len() != h || classes.second.len() != h {
            return Err(Error::InvalidConfig(
                "need one main and one second-moment class per level".into(),
            ));
        }
        if oracle == BonusOracle::Elliptical
            && classes
                .main
                .iter()
                .any(|c| !matches!(c.repr, crate::fclass::ClassRepr::Linear { .. }))
        {
            return Err(Error::InvalidConfig(
                "elliptical oracle requires linear classes".into(),
            ));
        }
        params.validate()?;
        let nz = mdp.num_z();
        let zeros = || vec![vec![0.0; nz]; h];
        let weighted_ctx = classes
            .main
            .iter()
            .map(|c| UncertaintyContext::new(c, params.lambda))
            .collect::<Result<Vec<_>, _>>()?;
        let unit_ctx = classes
            .main
            .iter()
            .map(|c| UncertaintyContext::new(c, params.lambda))
            .collect::<Result<Vec<_>, _>>()?;
        let (sub_weighted, sub_unit) = if oracle == BonusOracle::Subsample {
            let mk = || {
                classes
                    .main
                    .iter()
                    .map(|c| {
                        SubsampledSet::new(
                            c,
                            params.episodes,
                            mdp.horizon,
                            params.alpha,
                            params.delta,
                            params.c_sens,
                        )
                    })
                    .collect::<Vec<_>>()
            };
            (Some(mk()), Some(mk()))
        } else {
            (None, None)
        };
        let alpha = params.alpha;
        Ok(Voql {
            mdp,
            classes,
            oracle,
            params,
            state: VoqlState {
                episode: 0,
                f1: zeros(),
                f2: zeros(),
                fm2: zeros(),
                fhat1: zeros(),
                fhat2: zeros(),
                fhatm2: zeros(),
                ghat: zeros(),
                b1: vec![None; h],
                b2: vec![None; h],
                switch_level: h + 1,
            },
            datasets: (0..h).map(|_| LevelDataset::new(alpha)).collect(),
            weighted_ctx,
            unit_ctx,
            sub_weighted,
            sub_unit,
            raw_violations: 0,
        })
    }

    pub fn params(&self) -> &VoqlParams {
        &self.params
    }

    /// State-value table `max_a f(x, a)` of the next level's Q-table, or
    /// zeros at the boundary.
    fn v_table(&self, q_next: Option<&Vec<f64>>) -> Vec<f64> {
        match q_next {
            None => vec![0.0; self.mdp.num_states],
            Some(q) => (0..self.mdp.num_states)
                .map(|x| max_over_actions(q, x, self.mdp.num_actions))
                .collect(),
        }
    }

    fn regression_targets(&self, h: usize, v_next: &[f64]) -> Vec<f64> {
        let data = &self.datasets[h];
        data.rewards
            .iter()
            .zip(&data.next_states)
            .map(|(&r, &x_next)| r + v_next[x_next])
            .collect()
    }

    fn fit(
        &self,
        class: &FunctionClass,
        h: usize,
        targets: &[f64],
        weights: &[f64],
    ) -> Result<Fit, Error> {
        // the maintained covariance context already holds the ridge system
        // for the weighted linear path; everything else goes the generic way
        if matches!(class.repr, crate::fclass::ClassRepr::Linear { .. })
            && std::ptr::eq(class, &self.classes.main[h])
        {
            let ctx = &self.weighted_ctx[h];
            let unit = &self.unit_ctx[h];
            let uses_weighted = weights
                .iter()
                .zip(&self.datasets[h].sigma_bar)
                .all(|(&w, &s)| (w - 1.0 / (s * s)).abs() < 1e-15);
            let uses_unit = weights.iter().all(|&w| w == 1.0);
            let chosen = if uses_weighted {
                Some(ctx)
            } else if uses_unit {
                Some(unit)
            } else {
                None
            };
            if let Some(ctx) = chosen {
                let mut rhs = vec![0.0; class.phi_at(0).map(|p| p.len()).unwrap_or(0)];
                for ((&z, &y), &w) in self.datasets[h].z.iter().zip(targets).zip(weights) {
                    let phi = class.phi_at(z).expect("linear class");
                    for (j, p) in phi.iter().enumerate() {
                        rhs[j] += w * y * p;
                    }
                }
                let w_hat = ctx.solve_inv(&rhs);
                if let Some(w_hat) = w_hat {
                    return Ok(finish_linear_fit(class, w_hat));
                }
            }
        }
        weighted_regression(
            class,
            &self.datasets[h].z,
            targets,
            weights,
            self.params.lambda,
        )
    }

    fn build_bonus(
        &mut self,
        h: usize,
        center: &[f64],
        beta: f64,
        weighted: bool,
    ) -> Result<BonusFn, Error> {
        let class = &self.classes.main[h];
        let t = self.state.episode;
        let raw = match self.oracle {
            BonusOracle::VersionSpace => {
                let data = &self.datasets[h];
                let unit = vec![1.0; data.len()];
                let weights = if weighted { &data.sigma_bar } else { &unit };
                vs_bonus(class, center, &data.z, weights, beta, t)?
            }
            BonusOracle::Elliptical => {
                let ctx = if weighted {
                    &self.weighted_ctx[h]
                } else {
                    &self.unit_ctx[h]
                };
                elliptical_bonus_from_ctx(class, ctx, beta, self.params.lambda, t)
            }
            BonusOracle::Subsample => {
                let sets = if weighted {
                    self.sub_weighted.as_ref().unwrap()
                } else {
                    self.sub_unit.as_ref().unwrap()
                };
                subsample_bonus(&sets[h], class, center, beta, t)?
            }
        };
        let slot = if weighted {
            &mut self.state.b1[h]
        } else {
            &mut self.state.b2[h]
        };
        let enveloped = match slot.take() {
            Some(prev) => {
                let (env, violations) = enforce_consistency(raw, &prev);
                self.raw_violations += violations;
                env
            }
            None => raw,
        };
        *slot = Some(enveloped.clone());
        Ok(enveloped)
    }

    /// One full backward pass building this episode's value tables.
    pub fn backward_pass(&mut self) -> Result<(), Error> {
        let t = self.state.episode;
        let eps = self.params.eps;
        let beta1 = self.params.beta1(t);
        let beta2 = self.params.beta2(t);
        for h in (0..self.mdp.horizon).rev() {
            let next = if h + 1 < self.mdp.horizon {
                Some(&self.state.f1[h + 1])
            } else {
                None
            };
            let v1_next = self.v_table(next);
            let targets1 = self.regression_targets(h, &v1_next);
            let weights1: Vec<f64> = self.datasets[h]
                .sigma_bar
                .iter()
                .map(|s| 1.0 / (s * s))
                .collect();
            let fit1 = self.fit(&self.classes.main[h], h, &targets1, &weights1)?;
            self.state.fhat1[h] = fit1.values;
            let center1 = self.state.fhat1[h].clone();
            let b1 = self.build_bonus(h, &center1, beta1, true)?;
            self.state.f1[h] = clip_compose(&self.state.fhat1[h], &b1.values, eps, 0.0, 1.0);

            let unit = vec![1.0; self.datasets[h].len()];
            let next2 = if h + 1 < self.mdp.horizon {
                Some(&self.state.f2[h + 1])
            } else {
                None
            };
            let v2_next = self.v_table(next2);
            let targets2 = self.regression_targets(h, &v2_next);
            let fit2 = self.fit(&self.classes.main[h], h, &targets2, &unit)?;
            self.state.fhat2[h] = fit2.values;
            let center2 = self.state.fhat2[h].clone();
            let b2 = self.build_bonus(h, &center2, beta2, false)?;

            let nextm2 = if h + 1 < self.mdp.horizon {
                Some(&self.state.fm2[h + 1])
            } else {
                None
            };
            let vm2_next = self.v_table(nextm2);
            let targetsm2 = self.regression_targets(h, &vm2_next);
            let fitm2 = self.fit(&self.classes.main[h], h, &targetsm2, &unit)?;
            self.state.fhatm2[h] = fitm2.values;

            // f2 = min(fhat2 + 2 b1 + b2 + 3 eps, 2), fm2 = max(fhatm2 - b2 - eps, 0)
            let combined: Vec<f64> = b1
                .values
                .iter()
                .zip(&b2.values)
                .map(|(&a, &b)| 2.0 * a + b)
                .collect();
            self.state.f2[h] = clip_compose(&self.state.fhat2[h], &combined, 3.0 * eps, 0.0, 2.0);
            let neg_b2: Vec<f64> = b2.values.iter().map(|&b| -b).collect();
            self.state.fm2[h] =
                clip_compose(&self.state.fhatm2[h], &neg_b2, -eps, 0.0, self.params.range);

            let vg_next = match self.params.second_moment_target {
                SecondMomentTarget::Optimistic => v1_next.clone(),
                SecondMomentTarget::OverOptimistic => v2_next.clone(),
            };
            let g_targets: Vec<f64> = self.datasets[h]
                .rewards
                .iter()
                .zip(&self.datasets[h].next_states)
                .map(|(&r, &x_next)| {
                    let y = r + vg_next[x_next];
                    y * y
                })
                .collect();
            let fit_g = self.fit(&self.classes.second[h], h, &g_targets, &unit)?;
            self.state.ghat[h] = fit_g.values;
        }
        Ok(())
    }

    /// Variance over-estimate at a visited pair (episode >= 2).
    pub fn sigma_estimate(&self, h: usize, z: usize) -> f64 {
        let t = self.state.episode;
        if t <= 1 {
            return 2.0;
        }
        let d_unit = self.unit_ctx[h].d(&self.classes.main[h], z);
        let l = self.params.range;
        let lambda = self.params.lambda;
        let bb = self.params.beta_bar(t);
        let b2 = self.params.beta2(t);
        let correction = d_unit * ((bb * bb + lambda).sqrt() + 2.0 * l * (b2 * b2 + lambda).sqrt())
            + 2.0 * (1.0 + l) * self.params.eps;
        let raw =
            self.state.ghat[h][z] - self.state.fhatm2[h][z] * self.state.fhatm2[h][z] + correction;
        raw.clamp(0.0, 4.0).sqrt()
    }

    /// Regression weight at a visited pair from its variance estimate, the
    /// floor, the overly optimistic/pessimistic gap, and the weighted
    /// uncertainty.
    pub fn sigma_bar(&self, h: usize, z: usize, sigma: f64) -> f64 {
        let t = self.state.episode;
        if t <= 1 {
            return 2.0f64.max(self.params.alpha);
        }
        let gap = self.state.f2[h][z] - self.state.fm2[h][z];
        let d_w = self.weighted_ctx[h].d(&self.classes.main[h], z);
        sigma_bar_from_parts(
            sigma,
            gap,
            d_w,
            self.params.alpha,
            self.params.iota(),
            self.params.upsilon(),
        )
    }

    /// Greedy rule: optimistic argmax until the state values separate by more
    /// than `u_t`, then overly optimistic argmax for the rest of the episode.
    pub fn select_action(&self, x: usize, h: usize, switched: bool, u: f64) -> (usize, bool) {
        let na = self.mdp.num_actions;
        if switched {
            return (argmax_action(&self.state.f2[h], x, na), true);
        }
        let f1x = max_over_actions(&self.state.f1[h], x, na);
        let f2x = max_over_actions(&self.state.f2[h], x, na);
        if f1x >= f2x - u {
            (argmax_action(&self.state.f1[h], x, na), false)
        } else {
            (argmax_action(&self.state.f2[h], x, na), true)
        }
    }

    /// Run one episode: backward pass (from the second episode on), rollout,
    /// dataset and context updates. Returns the record plus an optional log.
    fn episode(
        &mut self,
        rng: &mut ChaCha8Rng,
        opt_value: f64,
        log_enabled: bool,
    ) -> Result<(RegretRecord, Option<EpisodeLog>), Error> {
        self.state.episode += 1;
        let t = self.state.episode;
        let u = self.params.u(t);
        let violations_before = self.raw_violations;
        if t > 1 {
            self.backward_pass()?;
        }
        let mut x = self.mdp.sample_initial(rng);
        let mut switched = false;
        self.state.switch_level = self.mdp.horizon + 1;
        let mut realized = 0.0;
        let mut sigma_bar_sum = 0.0;
        let mut visits = Vec::new();
        let beta1 = self.params.beta1(t);
        let beta2 = self.params.beta2(t);
        for h in 0..self.mdp.horizon {
            let a = if t == 1 {
                rng.gen_range(0..self.mdp.num_actions)
            } else {
                let (a, now_switched) = self.select_action(x, h, switched, u);
                if now_switched && !switched {
                    self.state.switch_level = h + 1;
                }
                switched = now_switched;
                a
            };
            let z = self.mdp.z_index(x, a);
            let sigma = self.sigma_estimate(h, z);
            let sigma_bar = self.sigma_bar(h, z, sigma);
            let r = self.mdp.sample_reward(h, z, rng);
            let x_next = self.mdp.sample_next_state(h, z, rng);
            realized += r;
            sigma_bar_sum += sigma_bar;
            if log_enabled {
                visits.push(VisitLog {
                    level: h + 1,
                    z,
                    sigma,
                    sigma_bar,
                    d_unit: self.unit_ctx[h].d(&self.classes.main[h], z),
                    d_weighted: self.weighted_ctx[h].d(&self.classes.main[h], z),
                    gap: self.state.f2[h][z] - self.state.fm2[h][z],
                    ghat_at_z: self.state.ghat[h][z],
                    fhat_m2_at_z: self.state.fhatm2[h][z],
                });
            }
            self.datasets[h].push(z, r, x_next, sigma_bar);
            self.weighted_ctx[h].push(&self.classes.main[h], z, sigma_bar);
            self.unit_ctx[h].push(&self.classes.main[h], z, 1.0);
            if let (Some(sw), Some(su)) = (&mut self.sub_weighted, &mut self.sub_unit) {
                sensitivity_update(&mut sw[h], &self.classes.main[h], z, sigma_bar, beta1, rng);
                sensitivity_update(&mut su[h], &self.classes.main[h], z, 1.0, beta2, rng);
            }
            x = x_next;
        }
        let v1_exact = if t == 1 {
            self.mdp.uniform_policy_value()
        } else {
            self.mdp
                .evaluate_exploration_policy(&self.state.f1, &self.state.f2, u)
        };
        let record = RegretRecord {
            episode: t,
            realized_return: realized,
            v1_exact,
            inst_regret: opt_value - v1_exact,
            cum_regret: 0.0, // filled by the caller
            switch_level: self.state.switch_level,
            mean_sigma_bar: sigma_bar_sum / self.mdp.horizon as f64,
            violations: self.raw_violations - violations_before,
        };
        let log = if log_enabled {
            let bonus_tables = |slot: &Vec<Option<BonusFn>>| -> Vec<Vec<f64>> {
                slot.iter()
                    .map(|b| b.as_ref().map(|b| b.values.clone()).unwrap_or_default())
                    .collect()
            };
            Some(EpisodeLog {
                episode: t,
                u,
                beta1,
                beta2,
                beta_bar: self.params.beta_bar(t),
                f1: self.state.f1.clone(),
                f2: self.state.f2.clone(),
                fm2: self.state.fm2.clone(),
                b1: bonus_tables(&self.state.b1),
                b2: bonus_tables(&self.state.b2),
                visits,
            })
        } else {
            None
        };
        Ok((record, log))
    }

    /// Worst gap between the exact conditional-expectation target of the
    /// current optimistic table and its best class approximation, per level.
    fn completeness_gap(&self, h: usize) -> f64 {
        let class = &self.classes.main[h];
        let next = if h + 1 < self.mdp.horizon {
            Some(&self.state.f1[h + 1])
        } else {
            None
        };
        let v_next = self.v_table(next);
        let target: Vec<f64> = (0..self.mdp.num_z())
            .map(|z| self.mdp.true_conditional(&v_next, h, z).0)
            .collect();
        let mut best = f64::INFINITY;
        for m in 0..class.len() {
            let worst = (0..self.mdp.num_z())
                .map(|z| (class.eval(m, z) - target[z]).abs())
                .fold(0.0f64, f64::max);
            best = best.min(worst);
        }
        if best.is_finite() {
            best
        } else {
            0.0
        }
    }
}

/// Compose the regression weight from its parts; shared by the learner and
/// the offline replay check so both produce bit-identical values.
pub fn sigma_bar_from_parts(
    sigma: f64,
    gap: f64,
    d_weighted: f64,
    alpha: f64,
    iota: f64,
    upsilon: f64,
) -> f64 {
    let gap_term = 2.0f64.sqrt() * iota * gap.max(0.0).sqrt();
    let d_term = 2.0 * (upsilon.sqrt() + iota) * d_weighted.max(0.0).sqrt();
    sigma.max(alpha).max(gap_term).max(d_term)
}

/// Run the learner for its full episode budget.
pub fn run(
    mdp: &EpisodicMdp,
    classes: &ClassSetup,
    oracle: BonusOracle,
    params: VoqlParams,
    seed: u64,
    log_enabled: bool,
) -> Result<RunOutput, Error> {
    let mut learner = Voql::new(mdp, classes, oracle, params)?;
    let sol = mdp.solve_optimal();
    let opt_value = mdp.optimal_value(&sol);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let episodes = learner.params.episodes;
    let mut records = Vec::with_capacity(episodes);
    let mut log = if log_enabled {
        Some(RunLog {
            episodes: Vec::with_capacity(episodes),
            realized_completeness: vec![0.0; mdp.horizon],
            params: Some(learner.params.clone()),
        })
    } else {
        None
    };
    let mut cum = 0.0;
    for t in 0..episodes {
        let (mut record, ep_log) =
            learner
                .episode(&mut rng, opt_value, log_enabled)
                .map_err(|e| Error::Run {
                    episode: t + 1,
                    message: e.to_string(),
                })?;
        cum += record.inst_regret;
        record.cum_regret = cum;
        records.push(record);
        if let (Some(log), Some(ep)) = (log.as_mut(), ep_log) {
            log.episodes.push(ep);
            if t > 0 {
                for h in 0..mdp.horizon {
                    let gap = learner.completeness_gap(h);
                    if gap > log.realized_completeness[h] {
                        log.realized_completeness[h] = gap;
                    }
                }
            }
        }
    }
    let subsample_distinct = learner
        .sub_weighted
        .as_ref()
        .map(|sets| sets.iter().map(|s| s.distinct_count()).collect());
    Ok(RunOutput {
        records,
        log,
        raw_consistency_violations: learner.raw_violations,
        subsample_distinct,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::gen_tabular_mdp;
    use crate::harness::tabular_exact_classes;

    fn small_setup(seed: u64) -> (EpisodicMdp, ClassSetup) {
        let mdp = gen_tabular_mdp(2, 2, 2, seed).unwrap();
        let classes = tabular_exact_classes(&mdp, 9);
        (mdp, classes)
    }

    #[test]
    fn first_episode_uses_flat_weights() {
        let (mdp, classes) = small_setup(3);
        let params = VoqlParams::derive(
            5,
            2,
            0.05,
            0.0,
            0.0,
            1.0,
            1.0,
            &classes,
            BonusOracle::VersionSpace,
        )
        .unwrap();
        let out = run(&mdp, &classes, BonusOracle::VersionSpace, params, 1, true).unwrap();
        let log = out.log.unwrap();
        for v in &log.episodes[0].visits {
            assert_eq!(v.sigma, 2.0);
            assert_eq!(v.sigma_bar, 2.0);
        }
        assert_eq!(out.records.len(), 5);
    }

    #[test]
    fn full_optimism_with_theory_constants_and_empty_history() {
        let (mdp, classes) = small_setup(5);
        let params = VoqlParams::derive(
            3,
            2,
            0.05,
            0.0,
            0.0,
            1.0,
            1.0,
            &classes,
            BonusOracle::VersionSpace,
        )
        .unwrap();
        let mut learner = Voql::new(&mdp, &classes, BonusOracle::VersionSpace, params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let opt = mdp.optimal_value(&mdp.solve_optimal());
        learner.episode(&mut rng, opt, false).unwrap();
        learner.episode(&mut rng, opt, false).unwrap();
        // theory-scale radii dwarf the two observations: full optimism
        for h in 0..mdp.horizon {
            for z in 0..mdp.num_z() {
                assert_eq!(learner.state.f1[h][z], 1.0);
                assert_eq!(learner.state.f2[h][z], 2.0);
                assert_eq!(learner.state.fm2[h][z], 0.0);
            }
        }
    }

    #[test]
    fn optimistic_gap_shrinks_and_stays_optimistic() {
        let (mdp, classes) = small_setup(11);
        let sol = mdp.solve_optimal();
        let params = VoqlParams::derive(
            200,
            2,
            0.05,
            0.0,
            0.0,
            0.02,
            1.0,
            &classes,
            BonusOracle::VersionSpace,
        )
        .unwrap();
        let mut learner = Voql::new(&mdp, &classes, BonusOracle::VersionSpace, params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let opt = mdp.optimal_value(&sol);
        let mut max_gaps = Vec::new();
        let mut optimistic_ok = 0usize;
        for _ in 0..200 {
            learner.episode(&mut rng, opt, false).unwrap();
            if learner.state.episode < 2 {
                continue;
            }
            let gap = (0..mdp.num_z())
                .map(|z| learner.state.f1[0][z] - sol.qstar[0][z])
                .fold(f64::NEG_INFINITY, f64::max);
            max_gaps.push(gap);
            if gap >= -1e-9 {
                optimistic_ok += 1;
            }
        }
        let early: f64 = max_gaps[..50].iter().sum::<f64>() / 50.0;
        let late: f64 = max_gaps[max_gaps.len() - 50..].iter().sum::<f64>() / 50.0;
        assert!(
            late < early,
            "optimistic excess not shrinking: {early} -> {late}"
        );
        let rate = optimistic_ok as f64 / max_gaps.len() as f64;
        assert!(rate >= 0.95, "optimism rate {rate}");
    }

    #[test]
    fn zero_reward_mdp_has_zero_regret() {
        let (mut mdp, _) = small_setup(13);
        for r in mdp.rewards.iter_mut() {
            r.iter_mut().for_each(|v| *v = 0.0);
        }
        let classes = tabular_exact_classes(&mdp, 9);
        let params = VoqlParams::derive(
            20,
            2,
            0.05,
            0.0,
            0.0,
            1.0,
            1.0,
            &classes,
            BonusOracle::VersionSpace,
        )
        .unwrap();
        let out = run(&mdp, &classes, BonusOracle::VersionSpace, params, 3, false).unwrap();
        for rec in &out.records {
            assert!(rec.inst_regret.abs() < 1e-12);
            assert!(rec.cum_regret.abs() < 1e-12);
        }
    }

    #[test]
    fn switch_level_never_unsets_within_episode() {
        let (mdp, classes) = small_setup(17);
        let params = VoqlParams::derive(
            60,
            2,
            0.05,
            0.0,
            0.0,
            0.2,
            0.05,
            &classes,
            BonusOracle::VersionSpace,
        )
        .unwrap();
        let out = run(&mdp, &classes, BonusOracle::VersionSpace, params, 5, false).unwrap();
        for rec in &out.records {
            assert!(rec.switch_level >= 1 && rec.switch_level <= mdp.horizon + 1);
        }
    }

    #[test]
    fn determinism_identical_seeds_identical_records() {
        let (mdp, classes) = small_setup(19);
        let params = VoqlParams::derive(
            30,
            2,
            0.05,
            0.0,
            0.0,
            0.3,
            1.0,
            &classes,
            BonusOracle::VersionSpace,
        )
        .unwrap();
        let a = run(
            &mdp,
            &classes,
            BonusOracle::VersionSpace,
            params.clone(),
            4,
            false,
        )
        .unwrap();
        let b = run(&mdp, &classes, BonusOracle::VersionSpace, params, 4, false).unwrap();
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!(ra.realized_return.to_bits(), rb.realized_return.to_bits());
            assert_eq!(ra.v1_exact.to_bits(), rb.v1_exact.to_bits());
            assert_eq!(ra.cum_regret.to_bits(), rb.cum_regret.to_bits());
            assert_eq!(ra.switch_level, rb.switch_level);
            assert_eq!(ra.mean_sigma_bar.to_bits(), rb.mean_sigma_bar.to_bits());
        }
    }

    #[test]
    fn sigma_bar_parts_floor_and_cap() {
        // all non-floor terms zero -> alpha; sigma = 2 dominates otherwise
        assert_eq!(sigma_bar_from_parts(0.0, 0.0, 0.0, 0.1, 3.0, 2.0), 0.1);
        assert_eq!(sigma_bar_from_parts(2.0, 0.0, 0.0, 0.1, 0.0, 0.0), 2.0);
    }

    #[test]
    fn sigma_estimate_vanishes_when_terms_cancel() {
        // single-member classes make the uncertainty degenerate (D = 0); with
        // ghat equal to the square of the pessimistic center, sigma must be 0
        let mdp = gen_tabular_mdp(2, 2, 2, 41).unwrap();
        let nz = mdp.num_z();
        let c = 0.6;
        let main: Vec<FunctionClass> = (0..2)
            .map(|h| FunctionClass::finite(h, nz, 1.0, vec![vec![c; nz]]))
            .collect();
        let second: Vec<FunctionClass> = (0..2)
            .map(|h| FunctionClass::finite(h, nz, 2.0, vec![vec![c * c; nz]]))
            .collect();
        let classes = ClassSetup { main, second };
        let params = VoqlParams::derive(
            5,
            2,
            0.05,
            0.0,
            0.0,
            1.0,
            1.0,
            &classes,
            BonusOracle::VersionSpace,
        )
        .unwrap();
        let mut learner = Voql::new(&mdp, &classes, BonusOracle::VersionSpace, params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let opt = mdp.optimal_value(&mdp.solve_optimal());
        learner.episode(&mut rng, opt, false).unwrap();
        learner.episode(&mut rng, opt, false).unwrap();
        assert_eq!(learner.sigma_estimate(0, 0), 0.0);
    }

    #[test]
    fn action_selection_follows_switch_rule() {
        let (mdp, classes) = small_setup(29);
        let params = VoqlParams::derive(
            5,
            2,
            0.05,
            0.0,
            0.0,
            1.0,
            1.0,
            &classes,
            BonusOracle::VersionSpace,
        )
        .unwrap();
        let mut learner = Voql::new(&mdp, &classes, BonusOracle::VersionSpace, params).unwrap();
        // x = 0: f1 favors action 0 with state value 0.5
        learner.state.f1[0] = vec![0.5, 0.3, 0.0, 0.0];
        // f2 state value 0.6: within threshold 0.2, stay on f1
        learner.state.f2[0] = vec![0.2, 0.6, 0.0, 0.0];
        let (a, switched) = learner.select_action(0, 0, false, 0.2);
        assert_eq!((a, switched), (0, false));
        // f2 state value 0.8: beyond the threshold, switch and follow f2
        learner.state.f2[0] = vec![0.2, 0.8, 0.0, 0.0];
        let (a, switched) = learner.select_action(0, 0, false, 0.2);
        assert_eq!((a, switched), (1, true));
        // once switched the rule never reconsiders
        let (a, switched) = learner.select_action(0, 0, true, 100.0);
        assert_eq!((a, switched), (1, true));
        // identical tables never switch, for any non-negative threshold
        learner.state.f2[0] = learner.state.f1[0].clone();
        let (_, switched) = learner.select_action(0, 0, false, 0.0);
        assert!(!switched);
    }

    #[test]
    fn schedule_formulas_match_hand_computation() {
        // values recomputed independently from the formulas with
        // T = 100, H = 4, L = 1, delta = 0.01, log N = 2, log N_b = 3
        let params = VoqlParams {
            episodes: 100,
            horizon: 4,
            delta: 0.01,
            alpha: 0.05,
            lambda: 1.0,
            eps: 0.1,
            eps_b: 0.0,
            range: 1.0,
            c_scale: 1.0,
            c_u: 1.0,
            log_n: 2.0,
            log_nb: 3.0,
            d_alpha: 1.0,
            c_sens: 1.0,
            second_moment_target: SecondMomentTarget::default(),
        };
        assert!((params.upsilon() - 4.487073704797437).abs() < 1e-12);
        assert!((params.iota() - 13.791463805215214).abs() < 1e-12);
        assert!((params.beta1(10) - 113.67966689315382).abs() < 1e-10);
        let mut no_misfit = params.clone();
        no_misfit.eps = 0.0;
        assert!((no_misfit.beta2(5) - 60.37336681405973).abs() < 1e-10);
        assert!((no_misfit.beta_bar(5) - 80.84839486244225).abs() < 1e-10);
    }

    #[test]
    fn radius_schedules_are_non_decreasing() {
        let (_, classes) = small_setup(23);
        let params = VoqlParams::derive(
            50,
            2,
            0.05,
            0.01,
            0.0,
            1.0,
            1.0,
            &classes,
            BonusOracle::VersionSpace,
        )
        .unwrap();
        params.validate().unwrap();
        let mut prev = 0.0;
        for t in 1..=50 {
            let b = params.beta1(t);
            assert!(b >= prev);
            prev = b;
        }
        // default threshold normalization: u_1 = 2
        assert!((params.u(1) - 2.0).abs() < 1e-9);
        assert!(params.u(2) < params.u(1));
    }
}
