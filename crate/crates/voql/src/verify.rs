//! Audits of the learner's structural guarantees against exact simulator
//! oracles: pointwise monotonicity of the value sandwich, the variance
//! estimator bounds, the bonus-oracle contract, and the subsampling sandwich.
//! Each check is a pure function of a run log (or raw oracle inputs) and
//! emits a deterministic violation report.

use crate::bonus::{s_max_bound, vs_bonus, BonusFn, SubsampledSet};
use crate::eluder::{gen_eluder_dim, UncertaintyContext};
use crate::env::{max_over_actions, EpisodicMdp, OptimalSolution};
use crate::fclass::FunctionClass;
use crate::learner::{RunLog, VoqlParams};
use crate::Error;
use serde::{Deserialize, Serialize};

const SLACK_TOL: f64 = 1e-9;
const MAX_SAMPLES: usize = 16;

/// One violating comparison, for debugging reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViolationSample {
    pub episode: usize,
    /// Earlier episode in cross-time checks (0 when not applicable).
    pub reference_episode: usize,
    pub level: usize,
    pub z: usize,
    pub kind: String,
    pub amount: f64,
}

/// Outcome of one audit: comparison counts and the worst signed slack
/// (positive = violation magnitude, non-positive = margin).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViolationReport {
    pub check: String,
    pub total: usize,
    pub violations: usize,
    pub worst_slack: f64,
    pub samples: Vec<ViolationSample>,
}

impl ViolationReport {
    fn new(check: &str) -> Self {
        ViolationReport {
            check: check.to_string(),
            total: 0,
            violations: 0,
            worst_slack: f64::NEG_INFINITY,
            samples: Vec::new(),
        }
    }

    /// Record one comparison with signed slack (`> 0` means violated).
    fn record(&mut self, slack: f64, sample: impl FnOnce() -> ViolationSample) {
        self.total += 1;
        if slack > self.worst_slack {
            self.worst_slack = slack;
        }
        if slack > SLACK_TOL {
            self.violations += 1;
            if self.samples.len() < MAX_SAMPLES {
                self.samples.push(sample());
            }
        }
    }

    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.violations as f64 / self.total as f64
        }
    }

    fn finish(mut self) -> Self {
        if self.total == 0 {
            self.worst_slack = 0.0;
        }
        self
    }
}

/// Deterministic sub-grid of `z` points (all when the grid is small).
fn sample_grid(num_z: usize, max_points: usize) -> Vec<usize> {
    if num_z <= max_points {
        (0..num_z).collect()
    } else {
        let stride = num_z as f64 / max_points as f64;
        (0..max_points)
            .map(|i| ((i as f64 * stride) as usize).min(num_z - 1))
            .collect()
    }
}

/// Log-uniform selection of earlier episodes `s <= t` (always includes 1 and `t`).
fn sample_earlier(t: usize, count: usize) -> Vec<usize> {
    let mut out = vec![1, t];
    if t > 2 {
        for i in 1..count {
            let frac = i as f64 / count as f64;
            let s = ((t as f64).powf(frac)).round() as usize;
            out.push(s.clamp(1, t));
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Pointwise sandwich of the value estimates around the optimum, including
/// the cross-time inequality against the Bellman backup of the current
/// optimistic table.
pub fn check_monotonicity(
    log: &RunLog,
    mdp: &EpisodicMdp,
    sol: &OptimalSolution,
    grid_points: usize,
) -> ViolationReport {
    let mut report = ViolationReport::new("monotonicity");
    let grid = sample_grid(mdp.num_z(), grid_points);
    for ep in &log.episodes {
        let t = ep.episode;
        if t < 2 {
            continue;
        }
        let earlier = sample_earlier(t, 4);
        for h in 0..mdp.horizon {
            // Bellman backup of this episode's optimistic table at h+1
            let v1_next: Vec<f64> = if h + 1 < mdp.horizon {
                (0..mdp.num_states)
                    .map(|x| max_over_actions(&ep.f1[h + 1], x, mdp.num_actions))
                    .collect()
            } else {
                vec![0.0; mdp.num_states]
            };
            for &z in &grid {
                let backup = mdp.true_conditional(&v1_next, h, z).0;
                report.record(sol.qstar[h][z] - ep.f1[h][z], || ViolationSample {
                    episode: t,
                    reference_episode: 0,
                    level: h + 1,
                    z,
                    kind: "qstar_above_optimistic".into(),
                    amount: sol.qstar[h][z] - ep.f1[h][z],
                });
                for &s in &earlier {
                    let Some(ep_s) = log.episodes.iter().find(|e| e.episode == s) else {
                        continue;
                    };
                    if s < 2 {
                        continue;
                    }
                    report.record(ep_s.fm2[h][z] - sol.qstar[h][z], || ViolationSample {
                        episode: t,
                        reference_episode: s,
                        level: h + 1,
                        z,
                        kind: "pessimistic_above_qstar".into(),
                        amount: ep_s.fm2[h][z] - sol.qstar[h][z],
                    });
                    report.record(ep.f1[h][z] - ep_s.f2[h][z], || ViolationSample {
                        episode: t,
                        reference_episode: s,
                        level: h + 1,
                        z,
                        kind: "optimistic_above_over_optimistic".into(),
                        amount: ep.f1[h][z] - ep_s.f2[h][z],
                    });
                    report.record(backup - ep_s.f2[h][z], || ViolationSample {
                        episode: t,
                        reference_episode: s,
                        level: h + 1,
                        z,
                        kind: "backup_above_over_optimistic".into(),
                        amount: backup - ep_s.f2[h][z],
                    });
                }
            }
        }
    }
    report.finish()
}

/// Variance estimator sandwich at every visited pair: lower bound against
/// the exact conditional variance of `r + V*^{h+1}`, upper bound with the
/// gap and uncertainty correction terms.
pub fn check_variance(
    log: &RunLog,
    mdp: &EpisodicMdp,
    sol: &OptimalSolution,
    params: &VoqlParams,
) -> (ViolationReport, ViolationReport) {
    let mut lower = ViolationReport::new("variance_lower");
    let mut upper = ViolationReport::new("variance_upper");
    let l = params.range;
    let lambda = params.lambda;
    for ep in &log.episodes {
        let t = ep.episode;
        if t < 2 {
            continue;
        }
        for visit in &ep.visits {
            let h = visit.level - 1;
            let true_var = mdp.true_conditional(&sol.vstar[h + 1], h, visit.z).1;
            let sigma_sq = visit.sigma * visit.sigma;
            lower.record(true_var - sigma_sq, || ViolationSample {
                episode: t,
                reference_episode: 0,
                level: visit.level,
                z: visit.z,
                kind: "sigma_below_true_variance".into(),
                amount: true_var - sigma_sq,
            });
            // upper bound: Var[r + f1^{h+1}] + 4 gap + 4 min(1, D (2 rt(bb^2+l) + 4L rt(b2^2+l))) + 4(2+L) eps
            let v1_next: Vec<f64> = if h + 1 < mdp.horizon {
                (0..mdp.num_states)
                    .map(|x| max_over_actions(&ep.f1[h + 1], x, mdp.num_actions))
                    .collect()
            } else {
                vec![0.0; mdp.num_states]
            };
            let var_f1 = mdp.true_conditional(&v1_next, h, visit.z).1;
            let d_term = visit.d_weighted
                * (2.0 * (ep.beta_bar * ep.beta_bar + lambda).sqrt()
                    + 4.0 * l * (ep.beta2 * ep.beta2 + lambda).sqrt());
            let bound = var_f1
                + 4.0 * visit.gap.max(0.0)
                + 4.0 * d_term.min(1.0)
                + 4.0 * (2.0 + l) * params.eps;
            upper.record(sigma_sq - bound, || ViolationSample {
                episode: t,
                reference_episode: 0,
                level: visit.level,
                z: visit.z,
                kind: "sigma_above_variance_bound".into(),
                amount: sigma_sq - bound,
            });
        }
    }
    (lower.finish(), upper.finish())
}

/// Bonus-oracle contract audit: domination of the exact version-space
/// supremum (property 2) and the uncertainty cap with the oracle's constant
/// (property 3).
#[allow(clippy::too_many_arguments)]
pub fn check_bonus_contract(
    candidate: &BonusFn,
    class: &FunctionClass,
    fhat: &[f64],
    data_z: &[usize],
    weights: &[f64],
    beta: f64,
    lambda: f64,
    cap_constant: f64,
    eps_b: f64,
) -> Result<ViolationReport, Error> {
    let mut report = ViolationReport::new("bonus_contract");
    let exact = vs_bonus(class, fhat, data_z, weights, beta, candidate.episode)?;
    let mut ctx = UncertaintyContext::new(class, lambda)?;
    for (&z, &s) in data_z.iter().zip(weights) {
        ctx.push(class, z, s);
    }
    for z in 0..class.num_z {
        report.record(exact.values[z] - candidate.values[z], || ViolationSample {
            episode: candidate.episode,
            reference_episode: 0,
            level: candidate.level,
            z,
            kind: "bonus_below_version_space".into(),
            amount: exact.values[z] - candidate.values[z],
        });
        let cap = cap_constant * (ctx.d(class, z) * (beta * beta + lambda).sqrt() + eps_b * beta);
        report.record(candidate.values[z] - cap, || ViolationSample {
            episode: candidate.episode,
            reference_episode: 0,
            level: candidate.level,
            z,
            kind: "bonus_above_uncertainty_cap".into(),
            amount: candidate.values[z] - cap,
        });
    }
    Ok(report.finish())
}

/// Subsampling guarantees: both sandwich legs pointwise at the query grid and
/// the distinct-count budget.
pub fn check_subsample(
    class: &FunctionClass,
    stream: &[(usize, f64)],
    set: &SubsampledSet,
    beta: f64,
    queries: &[usize],
) -> Result<ViolationReport, Error> {
    let mut report = ViolationReport::new("subsample_sandwich");
    let n = class.len();
    if n == 0 {
        return Err(Error::FunctionClass("empty class".into()));
    }
    // pair norms over the full stream and over the subsample
    let mut full = vec![0.0; n * n];
    for &(z, sigma) in stream {
        let vals = class.eval_all(z);
        let w = 1.0 / (sigma * sigma);
        for i in 0..n {
            for j in 0..n {
                let d = vals[i] - vals[j];
                full[i * n + j] += d * d * w;
            }
        }
    }
    let mut sub = vec![0.0; n * n];
    for e in &set.entries {
        let vals = class.eval_all(e.z);
        let w = e.multiplicity as f64 / (e.sigma_bar * e.sigma_bar);
        for i in 0..n {
            for j in 0..n {
                let d = vals[i] - vals[j];
                sub[i * n + j] += d * d * w;
            }
        }
    }
    let beta_sq = beta * beta;
    for &q in queries {
        let vals = class.eval_all(q);
        let sup = |norms: &Vec<f64>, radius: f64| -> f64 {
            let mut best = 0.0f64;
            for i in 0..n {
                for j in 0..n {
                    if norms[i * n + j] <= radius + 1e-12 {
                        best = best.max((vals[i] - vals[j]).abs());
                    }
                }
            }
            best
        };
        let full_beta = sup(&full, beta_sq);
        let sub_100 = sup(&sub, 100.0 * beta_sq);
        let full_10k = sup(&full, 10_000.0 * beta_sq);
        report.record(full_beta - sub_100, || ViolationSample {
            episode: 0,
            reference_episode: 0,
            level: class.level,
            z: q,
            kind: "lower_sandwich_leg".into(),
            amount: full_beta - sub_100,
        });
        report.record(sub_100 - full_10k, || ViolationSample {
            episode: 0,
            reference_episode: 0,
            level: class.level,
            z: q,
            kind: "upper_sandwich_leg".into(),
            amount: sub_100 - full_10k,
        });
    }
    // distinct count against the budget computed from the realized stream
    let zs: Vec<usize> = stream.iter().map(|&(z, _)| z).collect();
    let sigmas: Vec<f64> = stream.iter().map(|&(_, s)| s).collect();
    let dim = gen_eluder_dim(class, &zs, &sigmas, 1.0)?;
    let budget = s_max_bound(set.log_tn_delta, dim.max(1.0));
    report.record(set.distinct_count() as f64 - budget as f64, || {
        ViolationSample {
            episode: 0,
            reference_episode: 0,
            level: class.level,
            z: 0,
            kind: "distinct_count_budget".into(),
            amount: set.distinct_count() as f64 - budget as f64,
        }
    });
    Ok(report.finish())
}

/// Enveloped bonuses must be element-wise non-increasing across episodes at
/// every level.
pub fn check_bonus_monotonicity(log: &RunLog) -> ViolationReport {
    let mut report = ViolationReport::new("bonus_envelope_monotone");
    let mut prev: Option<&crate::learner::EpisodeLog> = None;
    for ep in &log.episodes {
        if ep.b1.iter().all(|t| t.is_empty()) {
            continue;
        }
        if let Some(p) = prev {
            for (label, cur_tables, prev_tables) in [("b1", &ep.b1, &p.b1), ("b2", &ep.b2, &p.b2)] {
                for (h, (cur, before)) in cur_tables.iter().zip(prev_tables).enumerate() {
                    if before.is_empty() {
                        continue;
                    }
                    for (z, (&c, &b)) in cur.iter().zip(before).enumerate() {
                        report.record(c - b, || ViolationSample {
                            episode: ep.episode,
                            reference_episode: p.episode,
                            level: h + 1,
                            z,
                            kind: format!("{label}_envelope_increase"),
                            amount: c - b,
                        });
                    }
                }
            }
        }
        prev = Some(ep);
    }
    report.finish()
}

/// Re-derive every logged weight from its logged inputs through the shared
/// formula; any bit drift is a violation.
pub fn check_sigma_bar_replay(log: &RunLog, params: &VoqlParams) -> ViolationReport {
    let mut report = ViolationReport::new("sigma_bar_replay");
    let iota = params.iota();
    let upsilon = params.upsilon();
    for ep in &log.episodes {
        if ep.episode < 2 {
            continue;
        }
        for visit in &ep.visits {
            let replayed = crate::learner::sigma_bar_from_parts(
                visit.sigma,
                visit.gap,
                visit.d_weighted,
                params.alpha,
                iota,
                upsilon,
            );
            let exact = replayed.to_bits() == visit.sigma_bar.to_bits();
            report.record(if exact { -1.0 } else { 1.0 }, || ViolationSample {
                episode: ep.episode,
                reference_episode: 0,
                level: visit.level,
                z: visit.z,
                kind: "sigma_bar_bit_drift".into(),
                amount: (replayed - visit.sigma_bar).abs(),
            });
        }
    }
    report.finish()
}
