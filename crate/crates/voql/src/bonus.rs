//! Bonus oracles: pointwise upper bounds on the prediction spread of the
//! version space around a regression center.
//!
//! Three implementations share one output type:
//!   - exact version-space supremum by enumeration (finite classes),
//!   - elliptical bonus from the weighted covariance (linear classes),
//!   - version-space supremum over an online sensitivity subsample.
//!
//! Raw bonus sequences need not be pointwise non-increasing across episodes
//! when the radius grows, so consumers wrap successive bonuses in a running
//! pointwise-min envelope; raw violations are counted and reported.

use crate::eluder::UncertaintyContext;
use crate::fclass::FunctionClass;
use crate::Error;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Which oracle produced a bonus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    VersionSpace,
    Elliptical,
    Subsample,
}

/// Compact parameterization that, together with the value table, fully
/// determines the evaluator.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BonusDescriptor {
    VersionSpace {
        radius_sq: f64,
    },
    Elliptical {
        scale: f64,
        dim: usize,
        sigma_inv: Vec<f64>,
    },
    Subsample {
        radius_sq: f64,
        distinct: usize,
        total_multiplicity: u64,
    },
    /// Pointwise min with the previous episode's bonus.
    Envelope {
        raw_violations: usize,
    },
}

/// A materialized bonus function over the state-action grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BonusFn {
    /// `b(z) >= 0` for every grid point.
    pub values: Vec<f64>,
    pub oracle: OracleKind,
    /// Episode and level the bonus was built at.
    pub episode: usize,
    pub level: usize,
    pub beta: f64,
    pub descriptor: BonusDescriptor,
}

impl BonusFn {
    #[inline]
    pub fn eval(&self, z: usize) -> f64 {
        self.values[z]
    }
}

/// Exact version-space bonus by enumeration:
/// `b(z) = max { |f(z) - fhat(z)| : sum_s (f(z_s)-fhat(z_s))^2 / sigma_s^2 <= beta^2 }`.
pub fn vs_bonus(
    class: &FunctionClass,
    fhat: &[f64],
    data_z: &[usize],
    sigma_bar: &[f64],
    beta: f64,
    episode: usize,
) -> Result<BonusFn, Error> {
    if beta < 0.0 {
        return Err(Error::InvalidConfig("negative version-space radius".into()));
    }
    if class.is_empty() {
        return Err(Error::FunctionClass("empty class".into()));
    }
    let radius_sq = beta * beta;
    let mut values = vec![0.0; class.num_z];
    for m in 0..class.len() {
        let mut dist = 0.0;
        for (&z, &s) in data_z.iter().zip(sigma_bar) {
            let e = class.eval(m, z) - fhat[z];
            dist += e * e / (s * s);
            if dist > radius_sq + 1e-12 {
                break;
            }
        }
        if dist <= radius_sq + 1e-12 {
            for (z, v) in values.iter_mut().enumerate() {
                let dev = (class.eval(m, z) - fhat[z]).abs();
                if dev > *v {
                    *v = dev;
                }
            }
        }
    }
    Ok(BonusFn {
        values,
        oracle: OracleKind::VersionSpace,
        episode,
        level: class.level,
        beta,
        descriptor: BonusDescriptor::VersionSpace { radius_sq },
    })
}

/// Elliptical bonus `b(z) = ||phi(z)||_{Sigma^-1} sqrt(beta^2 + lambda)` with
/// `Sigma = lambda/(4B^2) I + sum_s phi(z_s) phi(z_s)^T / sigma_s^2`, built
/// incrementally by rank-1 Sherman-Morrison updates.
pub fn elliptical_bonus(
    class: &FunctionClass,
    data_z: &[usize],
    sigma_bar: &[f64],
    beta: f64,
    lambda: f64,
    episode: usize,
) -> Result<BonusFn, Error> {
    let mut ctx = UncertaintyContext::new(class, lambda)?;
    for (&z, &s) in data_z.iter().zip(sigma_bar) {
        ctx.push(class, z, s);
    }
    Ok(elliptical_bonus_from_ctx(
        class, &ctx, beta, lambda, episode,
    ))
}

/// Elliptical bonus from an already-maintained covariance context.
pub fn elliptical_bonus_from_ctx(
    class: &FunctionClass,
    ctx: &UncertaintyContext,
    beta: f64,
    lambda: f64,
    episode: usize,
) -> BonusFn {
    let scale = (beta * beta + lambda).sqrt();
    let values: Vec<f64> = (0..class.num_z)
        .map(|z| ctx.dsq(class, z).max(0.0).sqrt() * scale)
        .collect();
    let (dim, sigma_inv) = match class.phi_at(0) {
        Some(p) => (p.len(), ctx_inverse_entries(ctx, p.len())),
        None => (0, Vec::new()),
    };
    BonusFn {
        values,
        oracle: OracleKind::Elliptical,
        episode,
        level: class.level,
        beta,
        descriptor: BonusDescriptor::Elliptical {
            scale,
            dim,
            sigma_inv,
        },
    }
}

fn ctx_inverse_entries(ctx: &UncertaintyContext, d: usize) -> Vec<f64> {
    // recover Sigma^-1 entries through quadratic forms on basis vectors:
    // inv[i][j] = (q(ei+ej) - q(ei) - q(ej)) / 2 with q(x) = x' Sigma^-1 x
    let probe = |x: &[f64]| ctx.quad_form_inv(x);
    let mut diag = vec![0.0; d];
    let mut basis = vec![0.0; d];
    for (i, di) in diag.iter_mut().enumerate() {
        basis.iter_mut().for_each(|v| *v = 0.0);
        basis[i] = 1.0;
        *di = probe(&basis);
    }
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        out[i * d + i] = diag[i];
        for j in (i + 1)..d {
            basis.iter_mut().for_each(|v| *v = 0.0);
            basis[i] = 1.0;
            basis[j] = 1.0;
            let q = probe(&basis);
            let off = 0.5 * (q - diag[i] - diag[j]);
            out[i * d + j] = off;
            out[j * d + i] = off;
        }
    }
    out
}

/// One weighted entry of a sensitivity subsample with its copy count.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubsampleEntry {
    pub z: usize,
    pub sigma_bar: f64,
    pub multiplicity: u64,
}

/// Online sensitivity subsample of one level's stream.
///
/// Distinct entries are stored once with integer multiplicities; per-pair
/// weighted norms over the subsample are cached incrementally so a
/// sensitivity query costs O(|F|^2).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubsampledSet {
    pub entries: Vec<SubsampleEntry>,
    /// `log(T N / delta)` factor in the inclusion probability.
    pub log_tn_delta: f64,
    /// Denominator truncation `T (H+1)^2 / alpha^2`.
    pub denominator_cap: f64,
    /// Oracle constant `C >= 1`.
    pub c_sens: f64,
    #[serde(skip)]
    pair_denoms: Vec<f64>,
    #[serde(skip)]
    n_members: usize,
}

/// What a single stream update did.
#[derive(Debug, Clone, Copy)]
pub struct SensitivityOutcome {
    pub score: f64,
    pub probability: f64,
    pub added_copies: u64,
}

impl SubsampledSet {
    pub fn new(
        class: &FunctionClass,
        t_max: usize,
        horizon: usize,
        alpha: f64,
        delta: f64,
        c_sens: f64,
    ) -> Self {
        let n = class.len();
        let n_class = n.max(2) as f64;
        SubsampledSet {
            entries: Vec::new(),
            log_tn_delta: (t_max as f64 * n_class / delta).ln().max(1.0),
            denominator_cap: t_max as f64 * ((horizon + 1) as f64).powi(2) / (alpha * alpha),
            c_sens,
            pair_denoms: vec![0.0; n * n.saturating_sub(1) / 2],
            n_members: n,
        }
    }

    pub fn distinct_count(&self) -> usize {
        self.entries.len()
    }

    pub fn total_multiplicity(&self) -> u64 {
        self.entries.iter().map(|e| e.multiplicity).sum()
    }

    /// Rebuild the pair-denominator cache (after deserialization).
    pub fn rebuild_cache(&mut self, class: &FunctionClass) {
        let n = class.len();
        self.n_members = n;
        self.pair_denoms = vec![0.0; n * n.saturating_sub(1) / 2];
        let entries = self.entries.clone();
        for e in &entries {
            self.accumulate(class, e.z, e.sigma_bar, e.multiplicity);
        }
    }

    fn accumulate(&mut self, class: &FunctionClass, z: usize, sigma_bar: f64, mult: u64) {
        let vals = class.eval_all(z);
        let w = mult as f64 / (sigma_bar * sigma_bar);
        let n = self.n_members;
        let mut k = 0usize;
        for i in 0..n {
            let vi = vals[i];
            for &vj in vals.iter().take(n).skip(i + 1) {
                let diff = vi - vj;
                self.pair_denoms[k] += diff * diff * w;
                k += 1;
            }
        }
    }

    /// Weighted sensitivity score of a candidate point against the current
    /// subsample, truncated denominator, capped at one.
    pub fn sensitivity_score(
        &self,
        class: &FunctionClass,
        z: usize,
        sigma_bar: f64,
        beta: f64,
    ) -> f64 {
        let n = self.n_members;
        if n < 2 {
            return 0.0;
        }
        let vals = class.eval_all(z);
        let inv_sq = 1.0 / (sigma_bar * sigma_bar);
        let beta_sq = beta * beta;
        let mut best = 0.0f64;
        let mut k = 0usize;
        for i in 0..n {
            let vi = vals[i];
            for &vj in vals.iter().take(n).skip(i + 1) {
                let diff = vi - vj;
                let num = diff * diff * inv_sq;
                let den = self.pair_denoms[k].min(self.denominator_cap) + beta_sq;
                let s = num / den;
                if s > best {
                    best = s;
                }
                k += 1;
            }
        }
        best.min(1.0)
    }
}

/// Smallest `p` with `1/p` a positive integer and `p >= q`, for `q in (0, 1]`.
pub fn reciprocal_integer_probability(q: f64) -> f64 {
    debug_assert!(q > 0.0 && q <= 1.0);
    let k = (1.0 / q).floor().max(1.0);
    1.0 / k
}

/// One step of online sensitivity subsampling: score the point, round the
/// inclusion probability to a reciprocal integer, and with that probability
/// add `1/p` copies. Zero-score points are skipped.
pub fn sensitivity_update(
    set: &mut SubsampledSet,
    class: &FunctionClass,
    z: usize,
    sigma_bar: f64,
    beta: f64,
    rng: &mut ChaCha8Rng,
) -> SensitivityOutcome {
    let score = set.sensitivity_score(class, z, sigma_bar, beta);
    if score <= 0.0 {
        return SensitivityOutcome {
            score,
            probability: 0.0,
            added_copies: 0,
        };
    }
    let q = (set.c_sens * score * set.log_tn_delta).min(1.0);
    let p = reciprocal_integer_probability(q);
    let copies = (1.0 / p).round() as u64;
    let mut added = 0;
    if rng.gen::<f64>() < p {
        set.entries.push(SubsampleEntry {
            z,
            sigma_bar,
            multiplicity: copies,
        });
        set.accumulate(class, z, sigma_bar, copies);
        added = copies;
    }
    SensitivityOutcome {
        score,
        probability: p,
        added_copies: added,
    }
}

/// Version-space bonus over the subsample: members within weighted distance
/// `(10 beta)^2` of the center over the subsampled set. An empty set leaves
/// the constraint vacuous, so the bonus falls back to the full prediction
/// spread around the center.
pub fn subsample_bonus(
    set: &SubsampledSet,
    class: &FunctionClass,
    fhat: &[f64],
    beta: f64,
    episode: usize,
) -> Result<BonusFn, Error> {
    if class.is_empty() {
        return Err(Error::FunctionClass("empty class".into()));
    }
    let radius_sq = 100.0 * beta * beta;
    let mut values = vec![0.0; class.num_z];
    for m in 0..class.len() {
        let mut dist = 0.0;
        for e in &set.entries {
            let diff = class.eval(m, e.z) - fhat[e.z];
            dist += e.multiplicity as f64 * diff * diff / (e.sigma_bar * e.sigma_bar);
            if dist > radius_sq + 1e-12 {
                break;
            }
        }
        if dist <= radius_sq + 1e-12 {
            for (z, v) in values.iter_mut().enumerate() {
                let dev = (class.eval(m, z) - fhat[z]).abs();
                if dev > *v {
                    *v = dev;
                }
            }
        }
    }
    Ok(BonusFn {
        values,
        oracle: OracleKind::Subsample,
        episode,
        level: class.level,
        beta,
        descriptor: BonusDescriptor::Subsample {
            radius_sq,
            distinct: set.distinct_count(),
            total_multiplicity: set.total_multiplicity(),
        },
    })
}

/// Pointwise-min envelope restoring the element-wise non-increasing property.
/// Returns the enveloped bonus and the count of grid points where the raw
/// bonus rose above the previous one.
pub fn enforce_consistency(current: BonusFn, previous: &BonusFn) -> (BonusFn, usize) {
    debug_assert_eq!(current.level, previous.level);
    let mut raw_violations = 0usize;
    let values: Vec<f64> = current
        .values
        .iter()
        .zip(&previous.values)
        .map(|(&c, &p)| {
            if c > p + 1e-12 {
                raw_violations += 1;
            }
            c.min(p)
        })
        .collect();
    let enveloped = BonusFn {
        values,
        oracle: current.oracle,
        episode: current.episode,
        level: current.level,
        beta: current.beta,
        descriptor: BonusDescriptor::Envelope { raw_violations },
    };
    (enveloped, raw_violations)
}

/// Distinct-count budget from the subsampling guarantee,
/// `S_max = C log(T N / delta) * dim`, with a pinned constant of 4.
pub fn s_max_bound(log_tn_delta: f64, dim_estimate: f64) -> usize {
    (4.0 * log_tn_delta * dim_estimate).ceil() as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fclass::build_linear_cover;
    use crate::linalg::norm2;
    use rand::prelude::*;

    fn zero_one_class() -> FunctionClass {
        FunctionClass::finite(0, 3, 1.0, vec![vec![0.0; 3], vec![1.0; 3]])
    }

    #[test]
    fn vs_bonus_zero_radius_unique_center() {
        let class = zero_one_class();
        let fhat = class.member_values(0);
        // one observation separates the two members
        let b = vs_bonus(&class, &fhat, &[0], &[1.0], 0.0, 1).unwrap();
        assert_eq!(b.values, vec![0.0; 3]);
    }

    #[test]
    fn vs_bonus_empty_data_covers_class() {
        let class = zero_one_class();
        let fhat = class.member_values(0);
        let b = vs_bonus(&class, &fhat, &[], &[], 1.0, 1).unwrap();
        assert_eq!(b.values, vec![1.0; 3]);
    }

    #[test]
    fn vs_bonus_rejects_negative_radius() {
        let class = zero_one_class();
        let fhat = class.member_values(0);
        assert!(vs_bonus(&class, &fhat, &[], &[], -1.0, 1).is_err());
    }

    #[test]
    fn vs_bonus_capped_by_uncertainty() {
        // property 3 with C = 1: b(z) <= D(z) sqrt(beta^2 + lambda)
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let num_z = 6;
        let lambda = 1.0;
        let tables: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..num_z).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let class = FunctionClass::finite(0, num_z, 1.0, tables);
        let n = 20;
        let data_z: Vec<usize> = (0..n).map(|_| rng.gen_range(0..num_z)).collect();
        let sigma_bar: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
        let mut ctx = crate::eluder::UncertaintyContext::new(&class, lambda).unwrap();
        for (&z, &s) in data_z.iter().zip(&sigma_bar) {
            ctx.push(&class, z, s);
        }
        let center = 7usize;
        let fhat = class.member_values(center);
        for &beta in &[0.5, 1.0, 2.0] {
            let b = vs_bonus(&class, &fhat, &data_z, &sigma_bar, beta, 1).unwrap();
            for z in 0..num_z {
                let cap = ctx.d(&class, z) * (beta * beta + lambda).sqrt();
                assert!(
                    b.values[z] <= cap + 1e-9,
                    "z={z} beta={beta}: {} > {}",
                    b.values[z],
                    cap
                );
            }
        }
    }

    #[test]
    fn elliptical_empty_data_identity_covariance() {
        // lambda = 1, B = 1/2 so the regularizer is exactly 1
        let phi = vec![1.0, 0.0, 0.0, 1.0];
        let class = build_linear_cover(phi, 2, 2, 0.5, 0.25, 1.0, 0, 100_000).unwrap();
        let beta_sq: f64 = 3.0;
        let b = elliptical_bonus(&class, &[], &[], beta_sq.sqrt(), 1.0, 1).unwrap();
        assert!((b.values[0] - 2.0).abs() < 1e-12);
        assert!((b.values[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn elliptical_diagonal_update() {
        let phi = vec![1.0, 0.0, 0.0, 1.0];
        let class = build_linear_cover(phi, 2, 2, 0.5, 0.25, 1.0, 0, 100_000).unwrap();
        let beta: f64 = 1.7;
        let b = elliptical_bonus(&class, &[0], &[1.0], beta, 1.0, 1).unwrap();
        // Sigma = diag(2, 1): b(e1) = sqrt(1/2) * sqrt(beta^2 + 1)
        let expect = (0.5f64).sqrt() * (beta * beta + 1.0).sqrt();
        assert!((b.values[0] - expect).abs() < 1e-12);
        let expect_e2 = (beta * beta + 1.0).sqrt();
        assert!((b.values[1] - expect_e2).abs() < 1e-12);
    }

    #[test]
    fn elliptical_dominates_cover_version_space() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let num_z = 30;
        let dim = 2;
        let ball = 0.25;
        let lambda = 1.0;
        let mut phi = vec![0.0; num_z * dim];
        for z in 0..num_z {
            let mut row: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = norm2(&row).max(1e-9);
            let target = rng.gen_range(0.3..1.0);
            row.iter_mut().for_each(|v| *v *= target / n);
            phi[z * dim..(z + 1) * dim].copy_from_slice(&row);
        }
        let linear = build_linear_cover(phi, num_z, dim, ball, 0.02, 1.0, 0, 100_000).unwrap();
        let tables: Vec<Vec<f64>> = (0..linear.len()).map(|m| linear.member_values(m)).collect();
        let finite = FunctionClass::finite_raw(0, num_z, ball, tables);
        let n = 15;
        let data_z: Vec<usize> = (0..n).map(|_| rng.gen_range(0..num_z)).collect();
        let sigma_bar: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
        let beta = 0.8;
        let center = 0usize;
        let fhat = finite.member_values(center);
        let vs = vs_bonus(&finite, &fhat, &data_z, &sigma_bar, beta, 1).unwrap();
        let ell = elliptical_bonus(&linear, &data_z, &sigma_bar, beta, lambda, 1).unwrap();
        for _ in 0..1000 {
            let z = rng.gen_range(0..num_z);
            assert!(
                ell.values[z] + 1e-9 >= vs.values[z],
                "z={z}: elliptical {} < vs {}",
                ell.values[z],
                vs.values[z]
            );
        }
    }

    #[test]
    fn reciprocal_integer_rounding() {
        assert_eq!(reciprocal_integer_probability(0.3), 1.0 / 3.0);
        assert_eq!(reciprocal_integer_probability(1.0), 1.0);
        assert_eq!(reciprocal_integer_probability(0.25), 0.25);
        assert_eq!(reciprocal_integer_probability(0.5), 0.5);
        // 1/p must be integer and p >= q
        let p = reciprocal_integer_probability(0.21);
        assert_eq!(p, 0.25);
    }

    #[test]
    fn sensitivity_skips_zero_score_points() {
        let class = FunctionClass::finite(0, 2, 1.0, vec![vec![0.5, 0.0], vec![0.5, 1.0]]);
        let mut set = SubsampledSet::new(&class, 100, 3, 0.1, 0.05, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // members agree at z = 0: zero sensitivity, never added
        let out = sensitivity_update(&mut set, &class, 0, 1.0, 1.0, &mut rng);
        assert_eq!(out.score, 0.0);
        assert_eq!(set.distinct_count(), 0);
    }

    #[test]
    fn identical_point_stream_keeps_distinct_count_low() {
        let class = zero_one_class();
        let t = 100;
        let dim_est = {
            let zs = vec![0usize; t];
            let sig = vec![1.0; t];
            crate::eluder::gen_eluder_dim(&class, &zs, &sig, 1.0).unwrap()
        };
        let mut worst = 0usize;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut set = SubsampledSet::new(&class, t, 3, 1.0, 0.05, 1.0);
            for _ in 0..t {
                sensitivity_update(&mut set, &class, 0, 1.0, 1.0, &mut rng);
            }
            worst = worst.max(set.distinct_count());
        }
        let budget = s_max_bound((t as f64 * 2.0 / 0.05).ln(), dim_est);
        assert!(worst <= budget, "worst {worst} > budget {budget}");
    }

    #[test]
    fn full_data_regime_equals_vs_bonus_at_ten_beta() {
        // huge C forces q >= 1, so every point enters exactly once
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let num_z = 4;
        let tables: Vec<Vec<f64>> = (0..12)
            .map(|_| (0..num_z).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let class = FunctionClass::finite(0, num_z, 1.0, tables);
        let mut set = SubsampledSet::new(&class, 50, 2, 0.5, 0.05, 1e12);
        let data_z: Vec<usize> = (0..30).map(|_| rng.gen_range(0..num_z)).collect();
        let sigma_bar: Vec<f64> = (0..30).map(|_| rng.gen_range(0.5..2.0)).collect();
        let beta = 0.4;
        for (&z, &s) in data_z.iter().zip(&sigma_bar) {
            let out = sensitivity_update(&mut set, &class, z, s, beta, &mut rng);
            if out.score > 0.0 {
                assert_eq!(out.added_copies, 1);
            }
        }
        let fhat = class.member_values(0);
        let sub = subsample_bonus(&set, &class, &fhat, beta, 1).unwrap();
        // entries with zero score were skipped, but those never separate any
        // pair, so the radius-10beta version space is unaffected
        let vs10 = vs_bonus(&class, &fhat, &data_z, &sigma_bar, 10.0 * beta, 1).unwrap();
        for z in 0..num_z {
            assert!((sub.values[z] - vs10.values[z]).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_set_falls_back_to_full_spread() {
        let class = zero_one_class();
        let set = SubsampledSet::new(&class, 10, 2, 0.5, 0.05, 1.0);
        let fhat = class.member_values(0);
        let b = subsample_bonus(&set, &class, &fhat, 0.3, 1).unwrap();
        assert_eq!(b.values, vec![1.0; 3]);
    }

    #[test]
    fn envelope_takes_pointwise_min() {
        let mk = |vals: Vec<f64>, t: usize| BonusFn {
            values: vals,
            oracle: OracleKind::VersionSpace,
            episode: t,
            level: 0,
            beta: 1.0,
            descriptor: BonusDescriptor::VersionSpace { radius_sq: 1.0 },
        };
        let prev = mk(vec![0.5, 0.2, 0.9], 1);
        let cur = mk(vec![0.4, 0.3, 0.9], 2);
        let (env, violations) = enforce_consistency(cur, &prev);
        assert_eq!(env.values, vec![0.4, 0.2, 0.9]);
        assert_eq!(violations, 1);
    }
}
