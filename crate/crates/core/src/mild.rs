//! Mild solutions `u(t) = K(t)∗u₀ + ∫₀ᵗ K(t−s)∗u(s)ᵖ ds` on a truncated
//! grid, computed by monotone Picard iteration.
//!
//! The convolution kernel is the translation-invariant form `K(t, x − y; 0)`,
//! which factorizes into one Gaussian per axis. Each node pair is weighted
//! by the exact integral of the kernel over the source cell, so even lags far
//! shorter than a cell keep the correct discrete mass. Outside the rectangle
//! the field is taken to be zero.
//!
//! Time nodes are `t_j = jΔ`, `Δ = t_end / n_time`. The Duhamel integral over
//! `[t_m, t_{m+1}]` is a product midpoint rule: the kernel is evaluated at
//! lag `t_j − (m + ½)Δ` (never at the singular lag 0) and the source at the
//! average of its two endpoint values.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, require_positive, Result};
use crate::grid::{Field, Grid2D};
use crate::kernel::KernelVariant;

/// Fields whose sup exceeds this are treated as diverging.
pub const OVERFLOW_GUARD: f64 = 1e12;

/// Minimum share of kernel mass the grid must capture around its centre
/// before a truncation warning is raised.
pub const MIN_CAPTURED_MASS: f64 = 0.99;

/// Cell-integrated kernel weights, indexed by node offset `d + (n − 1)`.
#[derive(Debug, Clone)]
pub struct ConvolutionWeights {
    w1: Vec<f64>,
    w2: Vec<f64>,
    n1: usize,
    n2: usize,
    /// Kernel mass within the rectangle as seen from the centre node,
    /// relative to the kernel's total mass.
    pub captured_mass: f64,
}

impl ConvolutionWeights {
    pub fn new(variant: KernelVariant, t: f64, grid: &Grid2D) -> Result<Self> {
        let (f1, f2) = variant.axis_factors(t)?;
        let axis = |n: usize, h: f64, f: &crate::kernel::GaussianFactor| -> Vec<f64> {
            (0..2 * n - 1)
                .map(|k| {
                    let d = k as f64 - (n as f64 - 1.0);
                    f.integral((d - 0.5) * h, (d + 0.5) * h)
                })
                .collect()
        };
        let w1 = axis(grid.n1, grid.h1(), &f1);
        let w2 = axis(grid.n2, grid.h2(), &f2);
        let centre_share = |w: &[f64], n: usize| -> f64 {
            let c = n / 2;
            (0..n).map(|k| w[c + n - 1 - k]).sum::<f64>()
        };
        let captured_mass = centre_share(&w1, grid.n1) * centre_share(&w2, grid.n2) / variant.total_mass();
        Ok(Self {
            w1,
            w2,
            n1: grid.n1,
            n2: grid.n2,
            captured_mass,
        })
    }

    /// Discrete convolution of a row-major `n1 × n2` array.
    pub fn apply(&self, src: &[f64]) -> Vec<f64> {
        let (n1, n2) = (self.n1, self.n2);
        let mut tmp = vec![0.0; n1 * n2];
        tmp.par_chunks_mut(n2).zip(src.par_chunks(n2)).for_each(|(out, row)| {
            for (j, o) in out.iter_mut().enumerate() {
                let base = j + n2 - 1;
                let mut acc = 0.0;
                for (l, &v) in row.iter().enumerate() {
                    acc += self.w2[base - l] * v;
                }
                *o = acc;
            }
        });
        let mut out = vec![0.0; n1 * n2];
        out.par_chunks_mut(n2).enumerate().for_each(|(i, orow)| {
            for k in 0..n1 {
                let w = self.w1[i + n1 - 1 - k];
                if w == 0.0 {
                    continue;
                }
                for (o, &v) in orow.iter_mut().zip(&tmp[k * n2..(k + 1) * n2]) {
                    *o += w * v;
                }
            }
        });
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Propagated {
    pub field: Field,
    pub captured_mass: f64,
    pub warning: Option<String>,
}

fn truncation_warning(captured: f64, t: f64) -> Option<String> {
    (captured < MIN_CAPTURED_MASS).then(|| {
        format!("grid captures only {captured:.4} of the kernel mass at t = {t}; enlarge the domain")
    })
}

/// `K(t) ∗ u₀` on the grid.
pub fn heat_propagate(u0: &Field, t: f64, variant: KernelVariant) -> Result<Propagated> {
    require_positive("t", t)?;
    let w = ConvolutionWeights::new(variant, t, &u0.grid)?;
    let mut values = w.apply(&u0.values);
    // Roundoff can leave −0.0-sized negatives only if the input had them.
    for v in &mut values {
        *v = v.max(0.0);
    }
    Ok(Propagated {
        field: Field {
            grid: u0.grid,
            values,
            t: u0.t + t,
        },
        captured_mass: w.captured_mass,
        warning: truncation_warning(w.captured_mass, t),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PicardConfig {
    pub p: f64,
    pub t_end: f64,
    pub n_time: usize,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol_sup")]
    pub tol_sup: f64,
    #[serde(default = "default_variant")]
    pub variant: KernelVariant,
    /// When false the `uᵖ` source is dropped and only `K∗u₀` remains.
    #[serde(default = "default_reaction")]
    pub reaction: bool,
}

fn default_max_iter() -> usize {
    50
}
fn default_tol_sup() -> f64 {
    1e-6
}
fn default_variant() -> KernelVariant {
    KernelVariant::UnitPaperFormula
}
fn default_reaction() -> bool {
    true
}

impl PicardConfig {
    pub fn new(p: f64, t_end: f64, n_time: usize) -> Self {
        Self {
            p,
            t_end,
            n_time,
            max_iter: default_max_iter(),
            tol_sup: default_tol_sup(),
            variant: default_variant(),
            reaction: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        require_positive("p", self.p)?;
        require_positive("t_end", self.t_end)?;
        require_positive("tol_sup", self.tol_sup)?;
        if self.n_time == 0 {
            return Err(invalid("n_time", "must be positive"));
        }
        if self.max_iter == 0 {
            return Err(invalid("max_iter", "must be positive"));
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        self.t_end / self.n_time as f64
    }
}

/// `I₁ = K∗u₀` and `I₂ = ∫K∗uᵖ` at one time node.
#[derive(Debug, Clone, PartialEq)]
pub struct DuhamelSplit {
    pub linear_part: Field,
    pub nonlinear_part: Field,
}

impl DuhamelSplit {
    pub fn total(&self) -> Field {
        let mut f = self.linear_part.clone();
        for (v, n) in f.values.iter_mut().zip(&self.nonlinear_part.values) {
            *v += n;
        }
        f
    }

    pub fn t(&self) -> f64 {
        self.linear_part.t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum PicardStatus {
    Converged,
    MaxIterReached,
    /// An iterate exceeded [`OVERFLOW_GUARD`] (or became non-finite) at
    /// time `t`.
    BlowupSuspected { t: f64 },
}

#[derive(Debug, Clone)]
pub struct PicardOutcome {
    pub status: PicardStatus,
    pub iterations: usize,
    /// Sup-norm change of the last iteration.
    pub last_change: f64,
    /// One split per time node `t_0 = 0, …, t_{n_time}`.
    pub splits: Vec<DuhamelSplit>,
    /// `(t_j, sup u(t_j))` for the last iterate.
    pub sup_trace: Vec<(f64, f64)>,
    pub warnings: Vec<String>,
}

impl PicardOutcome {
    pub fn converged(&self) -> bool {
        matches!(self.status, PicardStatus::Converged)
    }

    pub fn final_field(&self) -> Field {
        self.splits.last().expect("at least the initial node").total()
    }
}

fn sup_of(values: &[f64]) -> f64 {
    values.iter().fold(0.0_f64, |m, &v| if v.is_finite() { m.max(v) } else { f64::INFINITY })
}

pub fn picard_solve(cfg: &PicardConfig, u0: &Field) -> Result<PicardOutcome> {
    picard_solve_observed(cfg, u0, |_, _| {})
}

/// As [`picard_solve`], calling `observer(k, u)` with the solution values at
/// every time node after iterate `k` (k = 0 is the linear part).
pub fn picard_solve_observed<F>(cfg: &PicardConfig, u0: &Field, mut observer: F) -> Result<PicardOutcome>
where
    F: FnMut(usize, &[Vec<f64>]),
{
    cfg.validate()?;
    u0.grid.validate()?;
    if !u0.is_nonnegative() || !u0.all_finite() {
        return Err(invalid("u0", "initial field must be finite and nonnegative"));
    }
    let n = cfg.n_time;
    let dt = cfg.step();
    let times: Vec<f64> = (0..=n).map(|j| j as f64 * dt).collect();
    let mut warnings = Vec::new();

    let mut linear: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    linear.push(u0.values.clone());
    for &t in &times[1..] {
        let prop = heat_propagate(u0, t, cfg.variant)?;
        if let Some(w) = prop.warning {
            warnings.push(w);
        }
        linear.push(prop.field.values);
    }

    // lag ℓ = j − m ∈ 1..=n uses the kernel at (ℓ − ½)Δ.
    let lag_weights: Vec<ConvolutionWeights> = (1..=n)
        .map(|l| ConvolutionWeights::new(cfg.variant, (l as f64 - 0.5) * dt, &u0.grid))
        .collect::<Result<_>>()?;

    let cells = u0.grid.len();
    let mut nonlinear: Vec<Vec<f64>> = vec![vec![0.0; cells]; n + 1];
    let mut current: Vec<Vec<f64>> = linear.clone();
    observer(0, &current);

    let mut status = PicardStatus::MaxIterReached;
    let mut iterations = 0;
    let mut last_change = f64::INFINITY;

    if !cfg.reaction {
        status = PicardStatus::Converged;
        last_change = 0.0;
    } else {
        let p = cfg.p;
        for k in 1..=cfg.max_iter {
            let powered: Vec<Vec<f64>> = current
                .par_iter()
                .map(|u| u.iter().map(|&v| v.powf(p)).collect())
                .collect();
            let sources: Vec<Vec<f64>> = (0..n)
                .map(|m| {
                    powered[m]
                        .iter()
                        .zip(&powered[m + 1])
                        .map(|(a, b)| 0.5 * dt * (a + b))
                        .collect()
                })
                .collect();
            let next_nonlinear: Vec<Vec<f64>> = (0..=n)
                .into_par_iter()
                .map(|j| {
                    let mut acc = vec![0.0; cells];
                    for (m, src) in sources.iter().enumerate().take(j) {
                        let conv = lag_weights[j - m - 1].apply(src);
                        for (a, c) in acc.iter_mut().zip(conv) {
                            *a += c;
                        }
                    }
                    acc
                })
                .collect();
            let mut change: f64 = 0.0;
            let mut blowup_at = None;
            for j in 0..=n {
                for (c, (&l, &nl)) in current[j].iter_mut().zip(linear[j].iter().zip(&next_nonlinear[j])) {
                    let v = l + nl;
                    change = change.max((v - *c).abs());
                    *c = v;
                }
                if blowup_at.is_none() && sup_of(&current[j]) > OVERFLOW_GUARD {
                    blowup_at = Some(times[j]);
                }
            }
            nonlinear = next_nonlinear;
            iterations = k;
            last_change = change;
            observer(k, &current);
            if let Some(t) = blowup_at {
                status = PicardStatus::BlowupSuspected { t };
                break;
            }
            if change < cfg.tol_sup {
                status = PicardStatus::Converged;
                break;
            }
        }
    }

    let splits: Vec<DuhamelSplit> = times
        .iter()
        .zip(linear.into_iter().zip(nonlinear))
        .map(|(&t, (l, nl))| DuhamelSplit {
            linear_part: Field {
                grid: u0.grid,
                values: l,
                t,
            },
            nonlinear_part: Field {
                grid: u0.grid,
                values: nl,
                t,
            },
        })
        .collect();
    let sup_trace = splits.iter().map(|s| (s.t(), s.total().sup())).collect();
    Ok(PicardOutcome {
        status,
        iterations,
        last_change,
        splits,
        sup_trace,
        warnings,
    })
}

/// Solution of `w' = wᵖ`, `w(0) = w0`, for `0 < p < 1`.
pub fn sublinear_envelope(p: f64, w0: f64, t: f64) -> f64 {
    let q = 1.0 - p;
    (w0.powf(q) + q * t).powf(1.0 / q)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnvelopeCheck {
    pub passed: bool,
    /// Largest `sup u / envelope` over the trace.
    pub max_ratio: f64,
    /// `(t, sup u, envelope)` at the first violation.
    pub first_violation: Option<(f64, f64, f64)>,
}

pub const ENVELOPE_TOLERANCE: f64 = 0.05;

/// Checks `sup u(t) ≤ (1 + 5%)·w(t)` along a sup-norm trace, where `w` is
/// the comparison solution of `w' = wᵖ` started at `sup u₀`.
pub fn global_bound_monitor(trace: &[(f64, f64)], p: f64, sup_u0: f64) -> Result<EnvelopeCheck> {
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid("p", format!("the envelope needs 0 < p < 1, got {p}")));
    }
    if !(sup_u0 >= 0.0 && sup_u0.is_finite()) {
        return Err(invalid("sup_u0", "must be finite and ≥ 0"));
    }
    let mut max_ratio: f64 = 0.0;
    let mut first_violation = None;
    for &(t, s) in trace {
        let env = sublinear_envelope(p, sup_u0, t);
        if env > 0.0 {
            max_ratio = max_ratio.max(s / env);
        }
        if first_violation.is_none() && s > env * (1.0 + ENVELOPE_TOLERANCE) {
            first_violation = Some((t, s, env));
        }
    }
    Ok(EnvelopeCheck {
        passed: first_violation.is_none(),
        max_ratio,
        first_violation,
    })
}
