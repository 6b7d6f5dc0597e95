//! Function classes over a finite state-action grid, covers of linear weight
//! balls, and the (weighted) least-squares regression oracles.
//!
//! A class is either an explicit list of tables or a linear family
//! `f_w(z) = <w, phi(z)>` over a weight ball of radius `B`. Linear classes
//! carry an `eps_c`-cover of the ball: materialized as an indexed list when
//! small enough, or kept virtual (deterministic rounding grid) when
//! enumeration is infeasible.

use crate::linalg::{dot, norm2, Mat};
use crate::Error;
use serde::{Deserialize, Serialize};

/// One level's worth of experience tuples plus their regression weights.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LevelDataset {
    pub z: Vec<usize>,
    pub rewards: Vec<f64>,
    pub next_states: Vec<usize>,
    /// Weight sequence, one entry per tuple, each at least the floor `alpha`.
    pub sigma_bar: Vec<f64>,
    /// Weight floor the dataset was built with.
    pub weight_floor: f64,
}

impl LevelDataset {
    pub fn new(weight_floor: f64) -> Self {
        LevelDataset {
            weight_floor,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn push(&mut self, z: usize, reward: f64, next_state: usize, sigma_bar: f64) {
        debug_assert!(sigma_bar >= self.weight_floor);
        self.z.push(z);
        self.rewards.push(reward);
        self.next_states.push(next_state);
        self.sigma_bar.push(sigma_bar);
    }
}

/// Representation of a hypothesis set.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassRepr {
    /// Explicit tables indexed by member; values clipped to `[0, range]`.
    FiniteTable { tables: Vec<Vec<f64>> },
    /// Linear family over a feature matrix (`num_z x dim`, row-major) with an
    /// `eps_c`-cover of the `ball_radius`-ball. An empty `cover` means the
    /// cover is kept virtual (the rounding grid would exceed the member cap).
    Linear {
        phi: Vec<f64>,
        dim: usize,
        ball_radius: f64,
        eps_c: f64,
        cover: Vec<Vec<f64>>,
    },
}

/// A per-level hypothesis class mapping `z` to `[0, range]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FunctionClass {
    pub level: usize,
    pub num_z: usize,
    /// Range bound `L`.
    pub range: f64,
    pub repr: ClassRepr,
}

/// Result of a regression call: the selected member and its value table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Fit {
    /// Index into the class when the member set is materialized.
    pub member: Option<usize>,
    /// Weight vector for linear classes with a virtual cover.
    pub weights: Option<Vec<f64>>,
    /// Fitted values at every `z`.
    pub values: Vec<f64>,
}

impl FunctionClass {
    pub fn finite(level: usize, num_z: usize, range: f64, tables: Vec<Vec<f64>>) -> Self {
        let tables = tables
            .into_iter()
            .map(|t| t.into_iter().map(|v| v.clamp(0.0, range)).collect())
            .collect();
        FunctionClass {
            level,
            num_z,
            range,
            repr: ClassRepr::FiniteTable { tables },
        }
    }

    /// Finite class from raw tables without the `[0, range]` clamp. Used when
    /// materializing a linear cover as tables, whose values are signed.
    pub fn finite_raw(level: usize, num_z: usize, range: f64, tables: Vec<Vec<f64>>) -> Self {
        FunctionClass {
            level,
            num_z,
            range,
            repr: ClassRepr::FiniteTable { tables },
        }
    }

    /// Number of materialized members (0 for virtual linear covers).
    pub fn len(&self) -> usize {
        match &self.repr {
            ClassRepr::FiniteTable { tables } => tables.len(),
            ClassRepr::Linear { cover, .. } => cover.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Natural log of the class size used in the parameter formulas: member
    /// count when materialized, the standard `d log(1 + 2B/eps_c)` estimate
    /// for virtual covers.
    pub fn log_size(&self) -> f64 {
        match &self.repr {
            ClassRepr::FiniteTable { tables } => (tables.len().max(2) as f64).ln(),
            ClassRepr::Linear {
                dim,
                ball_radius,
                eps_c,
                cover,
                ..
            } => {
                if cover.is_empty() {
                    *dim as f64 * (1.0 + 2.0 * ball_radius / eps_c).ln()
                } else {
                    (cover.len().max(2) as f64).ln()
                }
            }
        }
    }

    pub fn eval(&self, member: usize, z: usize) -> f64 {
        match &self.repr {
            ClassRepr::FiniteTable { tables } => tables[member][z],
            ClassRepr::Linear {
                phi, dim, cover, ..
            } => dot(&cover[member], &phi[z * dim..(z + 1) * dim]),
        }
    }

    /// All member values at a single `z`, in member order.
    pub fn eval_all(&self, z: usize) -> Vec<f64> {
        (0..self.len()).map(|m| self.eval(m, z)).collect()
    }

    /// Value table of one member over the whole grid.
    pub fn member_values(&self, member: usize) -> Vec<f64> {
        (0..self.num_z).map(|z| self.eval(member, z)).collect()
    }

    pub fn phi_at(&self, z: usize) -> Option<&[f64]> {
        match &self.repr {
            ClassRepr::Linear { phi, dim, .. } => Some(&phi[z * dim..(z + 1) * dim]),
            ClassRepr::FiniteTable { .. } => None,
        }
    }
}

/// Weighted least squares over the class.
///
/// `weights` are multiplicative per-sample weights (the learner passes
/// `1 / sigma_bar^2`). Finite classes are solved by exact enumeration with
/// lowest-index tie-breaking. Linear classes solve the ridge problem with
/// regularizer `lambda / (4 B^2)` in closed form, radially project the weight
/// vector onto the `B`-ball, and snap to the nearest cover member.
pub fn weighted_regression(
    class: &FunctionClass,
    data_z: &[usize],
    targets: &[f64],
    weights: &[f64],
    lambda: f64,
) -> Result<Fit, Error> {
    if data_z.len() != targets.len() || data_z.len() != weights.len() {
        return Err(Error::FunctionClass(format!(
            "length mismatch: {} data, {} targets, {} weights",
            data_z.len(),
            targets.len(),
            weights.len()
        )));
    }
    match &class.repr {
        ClassRepr::FiniteTable { tables } => {
            if tables.is_empty() {
                return Err(Error::FunctionClass("empty class".into()));
            }
            let mut best = 0usize;
            let mut best_loss = f64::INFINITY;
            for (m, table) in tables.iter().enumerate() {
                let loss = table_loss(table, data_z, targets, weights);
                if loss < best_loss {
                    best_loss = loss;
                    best = m;
                }
            }
            Ok(Fit {
                member: Some(best),
                weights: None,
                values: tables[best].clone(),
            })
        }
        ClassRepr::Linear {
            phi,
            dim,
            ball_radius,
            ..
        } => {
            let d = *dim;
            let b = *ball_radius;
            let reg = if b > 0.0 { lambda / (4.0 * b * b) } else { 1.0 };
            let mut a = Mat::scaled_identity(d, reg);
            let mut rhs = vec![0.0; d];
            for ((&z, &y), &w) in data_z.iter().zip(targets).zip(weights) {
                let pz = &phi[z * d..(z + 1) * d];
                a.add_outer(w, pz);
                for j in 0..d {
                    rhs[j] += w * y * pz[j];
                }
            }
            let inv = a
                .inverse()
                .ok_or_else(|| Error::FunctionClass("singular ridge system".into()))?;
            let w_hat = inv.matvec(&rhs);
            Ok(finish_linear_fit(class, w_hat))
        }
    }
}

/// Finish a linear fit from a raw ridge solution: radial projection onto the
/// weight ball, then snap to the nearest cover member (materialized cover by
/// squared weight distance, virtual cover by grid rounding), ties to the
/// lowest index.
pub fn finish_linear_fit(class: &FunctionClass, mut w_hat: Vec<f64>) -> Fit {
    let (phi, d, b, eps_c, cover) = match &class.repr {
        ClassRepr::Linear {
            phi,
            dim,
            ball_radius,
            eps_c,
            cover,
        } => (phi, *dim, *ball_radius, *eps_c, cover),
        ClassRepr::FiniteTable { .. } => panic!("finish_linear_fit needs a linear class"),
    };
    let n = norm2(&w_hat);
    if n > b && n > 0.0 {
        let scale = b / n;
        for v in w_hat.iter_mut() {
            *v *= scale;
        }
    }
    if cover.is_empty() {
        let snapped = snap_to_grid(&w_hat, eps_c, b);
        let values = (0..class.num_z)
            .map(|z| dot(&snapped, &phi[z * d..(z + 1) * d]))
            .collect();
        Fit {
            member: None,
            weights: Some(snapped),
            values,
        }
    } else {
        let mut best = 0usize;
        let mut best_dist = f64::INFINITY;
        for (m, cw) in cover.iter().enumerate() {
            let dist: f64 = cw.iter().zip(&w_hat).map(|(a, b)| (a - b) * (a - b)).sum();
            if dist < best_dist {
                best_dist = dist;
                best = m;
            }
        }
        Fit {
            member: Some(best),
            weights: Some(cover[best].clone()),
            values: class.member_values(best),
        }
    }
}

/// Weighted squared loss of a value table against targets.
pub fn table_loss(values: &[f64], data_z: &[usize], targets: &[f64], weights: &[f64]) -> f64 {
    let mut loss = 0.0;
    for ((&z, &y), &w) in data_z.iter().zip(targets).zip(weights) {
        let e = values[z] - y;
        loss += w * e * e;
    }
    loss
}

/// Deterministic rounding-grid cover of the weight ball, spacing `eps_c`,
/// out-of-ball grid points projected radially onto the sphere.
fn snap_to_grid(w: &[f64], eps_c: f64, ball_radius: f64) -> Vec<f64> {
    let mut g: Vec<f64> = w.iter().map(|v| (v / eps_c).round() * eps_c).collect();
    let n = norm2(&g);
    if n > ball_radius && n > 0.0 {
        let scale = ball_radius / n;
        for v in g.iter_mut() {
            *v *= scale;
        }
    }
    g
}

/// Materialize the deterministic grid cover of the `ball_radius`-ball.
///
/// Errors when the grid would exceed `member_cap`; the caller should fall back
/// to a virtual cover in that case. The emitted cover size obeys
/// `(1 + 2B/eps_c)^d`.
#[allow(clippy::too_many_arguments)]
pub fn build_linear_cover(
    phi: Vec<f64>,
    num_z: usize,
    dim: usize,
    ball_radius: f64,
    eps_c: f64,
    range: f64,
    level: usize,
    member_cap: usize,
) -> Result<FunctionClass, Error> {
    if eps_c <= 0.0 {
        return Err(Error::FunctionClass("eps_c must be positive".into()));
    }
    if ball_radius == 0.0 {
        return Ok(FunctionClass {
            level,
            num_z,
            range,
            repr: ClassRepr::Linear {
                phi,
                dim,
                ball_radius,
                eps_c,
                cover: vec![vec![0.0; dim]],
            },
        });
    }
    let k_max = ((ball_radius + eps_c / 2.0) / eps_c).floor() as i64;
    let per_axis = (2 * k_max + 1) as f64;
    if per_axis.powi(dim as i32) > member_cap as f64 {
        return Err(Error::FunctionClass(format!(
            "cover of ~{:.0} members exceeds cap {member_cap}",
            per_axis.powi(dim as i32)
        )));
    }
    let mut cover: Vec<Vec<f64>> = Vec::new();
    let mut idx = vec![-k_max; dim];
    loop {
        let mut w: Vec<f64> = idx.iter().map(|&k| k as f64 * eps_c).collect();
        let n = norm2(&w);
        if n <= ball_radius + eps_c * (dim as f64).sqrt() {
            if n > ball_radius && n > 0.0 {
                let scale = ball_radius / n;
                for v in w.iter_mut() {
                    *v *= scale;
                }
            }
            if !cover.last().map(|prev| prev == &w).unwrap_or(false) {
                cover.push(w);
            }
        }
        // lexicographic advance
        let mut axis = dim;
        while axis > 0 {
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] <= k_max {
                break;
            }
            idx[axis] = -k_max;
            if axis == 0 {
                return Ok(FunctionClass {
                    level,
                    num_z,
                    range,
                    repr: ClassRepr::Linear {
                        phi,
                        dim,
                        ball_radius,
                        eps_c,
                        cover,
                    },
                });
            }
        }
    }
}

/// Pointwise `min(max(base + bonus + shift, lo), hi)` over value tables.
pub fn clip_compose(base: &[f64], bonus: &[f64], shift: f64, lo: f64, hi: f64) -> Vec<f64> {
    debug_assert!(lo <= hi);
    base.iter()
        .zip(bonus)
        .map(|(f, b)| (f + b + shift).clamp(lo, hi))
        .collect()
}
