//! Explicit finite differences for `u_t = ½(u_{x₁x₁} + x₁² u_{x₂x₂}) + uᵖ`,
//! with blowup detection, blowup-time extrapolation and the Fujita sweep.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, require_positive, LabError, Result};
use crate::grid::{make_initial, Field, Grid2D, InitialData};
use crate::kernel::{kernel_density, KernelVariant, SpacePoint, StartPoint};
use crate::stats::linear_fit;

/// The Fujita exponent `1 + 2/3`.
pub const FUJITA_EXPONENT: f64 = 5.0 / 3.0;

/// Runs with `|p − 5/3|` below this that reach `t_max` are not classified.
pub const NEAR_CRITICAL_BAND: f64 = 0.05;

/// Largest per-sample relative increase of the sup norm for a trace point
/// to count as resolved in the blowup fit.
pub const MAX_RESOLVED_INCREMENT: f64 = 0.05;

pub const MIN_FIT_POINTS: usize = 5;

/// Boundary values above this fraction of the sup trigger a warning.
pub const BOUNDARY_LEAK_RATIO: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Boundary {
    /// Reflecting: ghost value equals the adjacent boundary value.
    Neumann,
    /// Absorbing: ghost values are zero.
    Dirichlet0,
}

impl Boundary {
    /// Neumann for spatially constant data, Dirichlet0 otherwise.
    pub fn default_for(data: &InitialData) -> Self {
        if data.is_constant() {
            Boundary::Neumann
        } else {
            Boundary::Dirichlet0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FdConfig {
    pub grid: Grid2D,
    pub p: f64,
    pub bc: Boundary,
    #[serde(default = "default_dt_safety")]
    pub dt_safety: f64,
    #[serde(default = "default_blow_threshold")]
    pub blow_threshold: f64,
    pub t_max: f64,
    /// Spacing of the diagnostics rows (mass, `G`); `None` means `t_max/100`.
    #[serde(default)]
    pub output_interval: Option<f64>,
    #[serde(default = "default_reaction")]
    pub reaction: bool,
    /// Kernel used for the `G(t)` diagnostic.
    #[serde(default)]
    pub g_variant: KernelVariant,
}

fn default_dt_safety() -> f64 {
    0.4
}
fn default_blow_threshold() -> f64 {
    1e8
}
fn default_reaction() -> bool {
    true
}

impl FdConfig {
    pub fn new(grid: Grid2D, p: f64, bc: Boundary, t_max: f64) -> Self {
        Self {
            grid,
            p,
            bc,
            dt_safety: default_dt_safety(),
            blow_threshold: default_blow_threshold(),
            t_max,
            output_interval: None,
            reaction: true,
            g_variant: KernelVariant::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        require_positive("p", self.p)?;
        require_positive("t_max", self.t_max)?;
        require_positive("blow_threshold", self.blow_threshold)?;
        if !(self.dt_safety > 0.0 && self.dt_safety <= 1.0) {
            return Err(invalid("dt_safety", format!("must lie in (0, 1], got {}", self.dt_safety)));
        }
        if let Some(dt) = self.output_interval {
            require_positive("output_interval", dt)?;
        }
        Ok(())
    }

    /// Static stable step `dt_safety / (1/h1² + max x₁²/h2²)`.
    pub fn dt(&self) -> f64 {
        let g = &self.grid;
        self.dt_safety / (1.0 / (g.h1() * g.h1()) + g.max_x1_sq() / (g.h2() * g.h2()))
    }

    fn output_interval(&self) -> f64 {
        self.output_interval.unwrap_or(self.t_max / 100.0)
    }
}

fn reaction_term(u: f64, p: f64) -> f64 {
    let u = u.max(0.0);
    if p == 2.0 {
        u * u
    } else {
        u.powf(p)
    }
}

fn step_into(u: &[f64], out: &mut [f64], cfg: &FdConfig, dt: f64) {
    let g = cfg.grid;
    let (n1, n2) = (g.n1, g.n2);
    let (ih1, ih2) = (1.0 / (g.h1() * g.h1()), 1.0 / (g.h2() * g.h2()));
    let neumann = cfg.bc == Boundary::Neumann;
    let ghost = |inner: f64| if neumann { inner } else { 0.0 };
    out.par_chunks_mut(n2).with_min_len(4).enumerate().for_each(|(i, row)| {
        let x1 = g.x1(i);
        let c2 = x1 * x1 * ih2;
        let cur = &u[i * n2..(i + 1) * n2];
        let up = if i + 1 < n1 { Some(&u[(i + 1) * n2..(i + 2) * n2]) } else { None };
        let down = if i > 0 { Some(&u[(i - 1) * n2..i * n2]) } else { None };
        for j in 0..n2 {
            let c = cur[j];
            let n = up.map_or_else(|| ghost(c), |r| r[j]);
            let s = down.map_or_else(|| ghost(c), |r| r[j]);
            let e = if j + 1 < n2 { cur[j + 1] } else { ghost(c) };
            let w = if j > 0 { cur[j - 1] } else { ghost(c) };
            let d11 = (n - 2.0 * c + s) * ih1;
            let d22 = (e - 2.0 * c + w) * c2;
            let mut rate = 0.5 * (d11 + d22);
            if cfg.reaction {
                rate += reaction_term(c, cfg.p);
            }
            row[j] = c + dt * rate;
        }
    });
}

fn first_non_finite(values: &[f64], grid: &Grid2D, t: f64) -> Option<LabError> {
    values.iter().position(|v| !v.is_finite()).map(|k| LabError::NonFiniteNode {
        i: k / grid.n2,
        j: k % grid.n2,
        t,
    })
}

/// One explicit Euler step of size [`FdConfig::dt`].
pub fn fd_step(u: &Field, cfg: &FdConfig) -> Result<Field> {
    cfg.validate()?;
    if u.grid != cfg.grid {
        return Err(invalid("u", "field grid differs from the configured grid"));
    }
    let dt = cfg.dt();
    let mut values = vec![0.0; u.values.len()];
    step_into(&u.values, &mut values, cfg, dt);
    let t = u.t + dt;
    if let Some(e) = first_non_finite(&values, &u.grid, t) {
        return Err(e);
    }
    Ok(Field { grid: u.grid, values, t })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind")]
pub enum BlowupVerdict {
    BlewUp { t_est: f64, fit_quality: f64 },
    BoundedUpTo { t_max: f64, sup_final: f64 },
    Inconclusive { reason: String },
}

impl BlowupVerdict {
    pub fn name(&self) -> &'static str {
        match self {
            BlowupVerdict::BlewUp { .. } => "BlewUp",
            BlowupVerdict::BoundedUpTo { .. } => "BoundedUpTo",
            BlowupVerdict::Inconclusive { .. } => "Inconclusive",
        }
    }

    pub fn t_est(&self) -> Option<f64> {
        match *self {
            BlowupVerdict::BlewUp { t_est, .. } => Some(t_est),
            _ => None,
        }
    }

    pub fn fit_quality(&self) -> Option<f64> {
        match *self {
            BlowupVerdict::BlewUp { fit_quality, .. } => Some(fit_quality),
            _ => None,
        }
    }
}

impl fmt::Display for BlowupVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlowupVerdict::BlewUp { t_est, fit_quality } => write!(f, "BlewUp(t_est={t_est}, R²={fit_quality})"),
            BlowupVerdict::BoundedUpTo { t_max, sup_final } => write!(f, "BoundedUpTo(t_max={t_max}, sup={sup_final})"),
            BlowupVerdict::Inconclusive { reason } => write!(f, "Inconclusive({reason})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Diagnostic {
    pub t: f64,
    pub sup: f64,
    pub mass: f64,
    /// `None` at `t = 0`, where the kernel is undefined.
    pub g: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FdRun {
    pub verdict: BlowupVerdict,
    /// `(t, sup u)` after every step, starting at `t = 0`.
    pub sup_trace: Vec<(f64, f64)>,
    pub diagnostics: Vec<Diagnostic>,
    pub final_field: Field,
    pub steps: usize,
    pub dt: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlowupFit {
    pub t_est: f64,
    pub fit_quality: f64,
    pub points: usize,
}

/// Fits `sup^{−(p−1)}` linearly in `t` over the last decade of resolved
/// growth; the zero crossing estimates the blowup time.
///
/// A sample is resolved when the sup grew by at most
/// [`MAX_RESOLVED_INCREMENT`] relative to the previous one. Returns the
/// reason as `Err` when no fit is possible.
pub fn estimate_blowup_time(trace: &[(f64, f64)], p: f64) -> std::result::Result<BlowupFit, String> {
    if !(p > 1.0) {
        return Err(format!("blowup fit needs p > 1, got {p}"));
    }
    let mut usable: Vec<(f64, f64)> = Vec::new();
    for w in trace.windows(2) {
        let ((_, s0), (t1, s1)) = (w[0], w[1]);
        if s0 > 0.0 && s1.is_finite() && s1 > s0 && (s1 - s0) / s0 <= MAX_RESOLVED_INCREMENT {
            usable.push((t1, s1));
        }
    }
    let top = match usable.last() {
        Some(&(_, s)) => s,
        None => return Err("no resolved growth in trace".into()),
    };
    let window: Vec<(f64, f64)> = usable.into_iter().filter(|&(_, s)| s >= top / 10.0).collect();
    if window.len() < MIN_FIT_POINTS {
        return Err(format!("only {} usable points in the last decade of growth", window.len()));
    }
    let ts: Vec<f64> = window.iter().map(|w| w.0).collect();
    let ys: Vec<f64> = window.iter().map(|w| w.1.powf(1.0 - p)).collect();
    let fit = linear_fit(&ts, &ys).ok_or("degenerate fit window")?;
    if !(fit.slope < 0.0) {
        return Err("transformed sup is not decreasing".into());
    }
    Ok(BlowupFit {
        t_est: -fit.intercept / fit.slope,
        fit_quality: fit.r_squared,
        points: window.len(),
    })
}

/// Blowup time of `v' = vᵖ`, `v(0) = μ`.
pub fn ode_lower_bound(mu: f64, p: f64) -> Result<f64> {
    require_positive("mu", mu)?;
    if !(p > 1.0) {
        return Err(invalid("p", format!("must exceed 1, got {p}")));
    }
    Ok(mu.powf(1.0 - p) / (p - 1.0))
}

/// Midpoint-rule `∫K(t, x; μ) u(t, x) dx` over the grid, with `t = u.t`.
pub fn g_functional(u: &Field, mu: StartPoint, variant: KernelVariant) -> Result<f64> {
    require_positive("t", u.t)?;
    let g = u.grid;
    let rows: Vec<f64> = (0..g.n1)
        .into_par_iter()
        .map(|i| {
            let x1 = g.x1(i);
            (0..g.n2)
                .map(|j| {
                    let k = kernel_density(variant, u.t, SpacePoint::new(x1, g.x2(j)), mu).unwrap_or(0.0);
                    k * u.at(i, j)
                })
                .sum::<f64>()
        })
        .collect();
    Ok(rows.iter().sum::<f64>() * g.cell_area())
}

/// Linear interpolation of a `(t, value)` trace sorted by `t`.
pub fn interpolate_trace(trace: &[(f64, f64)], t: f64) -> Option<f64> {
    let k = trace.partition_point(|&(s, _)| s < t);
    if k == trace.len() {
        return None;
    }
    let (t1, v1) = trace[k];
    if t1 == t || k == 0 {
        return (t1 == t).then_some(v1);
    }
    let (t0, v0) = trace[k - 1];
    Some(v0 + (v1 - v0) * (t - t0) / (t1 - t0))
}

fn diagnostic(u: &Field, variant: KernelVariant) -> Diagnostic {
    Diagnostic {
        t: u.t,
        sup: u.sup(),
        mass: u.mass(),
        g: (u.t > 0.0).then(|| g_functional(u, StartPoint::ORIGIN, variant).unwrap_or(f64::NAN)),
    }
}

/// Latest blowup time after a crossing at level `m` that a fit may report:
/// twice the time `v' = vᵖ` needs to blow up from `v = m`. A finite
/// threshold is always crossed strictly before the true blowup time, by
/// about that ODE time, which is not small when `p` is close to 1.
pub fn crossing_slack(m: f64, p: f64) -> f64 {
    if p > 1.0 && m > 0.0 {
        2.0 * m.powf(1.0 - p) / (p - 1.0)
    } else {
        0.0
    }
}

/// Integrates from `u0` until the sup crosses `blow_threshold` or `t_max`
/// is reached.
pub fn run_to_verdict(cfg: &FdConfig, u0: &Field) -> Result<FdRun> {
    cfg.validate()?;
    if u0.grid != cfg.grid {
        return Err(invalid("u0", "field grid differs from the configured grid"));
    }
    if !u0.is_nonnegative() || !u0.all_finite() {
        return Err(invalid("u0", "initial field must be finite and nonnegative"));
    }
    let dt = cfg.dt();
    let every = cfg.output_interval();
    let uniform_start = u0.sup() == u0.inf();
    let mut warnings = Vec::new();
    let mut leak_warned = false;

    let mut cur = u0.values.clone();
    let mut next = vec![0.0; cur.len()];
    let mut t = u0.t;
    let start = u0.t;
    let mut steps = 0usize;
    let mut sup = u0.sup();
    let mut sup_trace = vec![(t, sup)];
    let mut diagnostics = vec![diagnostic(u0, cfg.g_variant)];
    let mut next_output = start + every;
    let mut crossed_at = None;
    let mut failure = None;

    while t < start + cfg.t_max {
        step_into(&cur, &mut next, cfg, dt);
        std::mem::swap(&mut cur, &mut next);
        steps += 1;
        t = start + steps as f64 * dt;
        sup = cur.iter().fold(0.0_f64, |m, &v| m.max(v));
        if let Some(e) = first_non_finite(&cur, &cfg.grid, t) {
            failure = Some(e.to_string());
            break;
        }
        sup_trace.push((t, sup));
        if t >= next_output - 1e-12 * every {
            let field = Field {
                grid: cfg.grid,
                values: cur.clone(),
                t,
            };
            diagnostics.push(diagnostic(&field, cfg.g_variant));
            if !uniform_start && !leak_warned && field.boundary_sup() > BOUNDARY_LEAK_RATIO * sup {
                warnings.push(format!(
                    "boundary value {:.3e} exceeds {BOUNDARY_LEAK_RATIO:e} of sup {:.3e} at t = {t}; enlarge the domain",
                    field.boundary_sup(),
                    sup
                ));
                leak_warned = true;
            }
            while next_output <= t {
                next_output += every;
            }
        }
        if sup >= cfg.blow_threshold {
            crossed_at = Some(t);
            break;
        }
    }

    let final_field = Field {
        grid: cfg.grid,
        values: cur,
        t,
    };
    if diagnostics.last().map(|d| d.t) != Some(t) {
        diagnostics.push(diagnostic(&final_field, cfg.g_variant));
    }

    let verdict = if let Some(reason) = failure {
        BlowupVerdict::Inconclusive { reason }
    } else if let Some(t_cross) = crossed_at {
        let latest = t_cross - start + crossing_slack(sup, cfg.p);
        match estimate_blowup_time(&sup_trace, cfg.p) {
            Ok(fit) if fit.t_est <= latest => BlowupVerdict::BlewUp {
                t_est: fit.t_est,
                fit_quality: fit.fit_quality,
            },
            Ok(fit) => BlowupVerdict::Inconclusive {
                reason: format!("fitted time {} lies beyond {latest} (threshold crossed at {t_cross})", fit.t_est),
            },
            Err(reason) => BlowupVerdict::Inconclusive { reason },
        }
    } else if cfg.p > 1.0 && (cfg.p - FUJITA_EXPONENT).abs() < NEAR_CRITICAL_BAND {
        BlowupVerdict::Inconclusive {
            reason: format!("near-critical p = {} bounded up to t_max = {}", cfg.p, cfg.t_max),
        }
    } else {
        BlowupVerdict::BoundedUpTo {
            t_max: cfg.t_max,
            sup_final: sup,
        }
    };

    Ok(FdRun {
        verdict,
        sup_trace,
        diagnostics,
        final_field,
        steps,
        dt,
        warnings,
    })
}

/// Grid and run parameters shared by every sweep entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepTemplate {
    pub grid: Grid2D,
    pub t_max: f64,
    #[serde(default = "default_dt_safety")]
    pub dt_safety: f64,
    #[serde(default = "default_blow_threshold")]
    pub blow_threshold: f64,
    /// `None` picks [`Boundary::default_for`] per data kind.
    #[serde(default)]
    pub bc: Option<Boundary>,
}

impl SweepTemplate {
    pub fn config_for(&self, p: f64, data: &InitialData) -> FdConfig {
        FdConfig {
            dt_safety: self.dt_safety,
            blow_threshold: self.blow_threshold,
            ..FdConfig::new(self.grid, p, self.bc.unwrap_or_else(|| Boundary::default_for(data)), self.t_max)
        }
    }
}

/// Where `p` sits relative to the exponents of the global-existence /
/// blowup trichotomy.
pub fn regime(p: f64) -> &'static str {
    if p <= 1.0 {
        "global"
    } else if (p - FUJITA_EXPONENT).abs() < NEAR_CRITICAL_BAND {
        "near_critical"
    } else if p < FUJITA_EXPONENT {
        "blowup"
    } else {
        "supercritical"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub p: f64,
    pub data: InitialData,
    pub verdict: BlowupVerdict,
    pub regime: &'static str,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// `p,data,verdict,t_est,fit_quality,regime` rows; empty cells where a
    /// value does not apply.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "p,data,verdict,t_est,fit_quality,regime")?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.16e}")).unwrap_or_default();
        for r in &self.rows {
            writeln!(
                out,
                "{:.16e},{},{},{},{},{}",
                r.p,
                r.data,
                r.verdict.name(),
                opt(r.verdict.t_est()),
                opt(r.verdict.fit_quality()),
                r.regime
            )?;
        }
        Ok(())
    }
}

/// Runs every `(p, data)` pair; rows follow `p_list` order, then `data_list`.
pub fn fujita_sweep(p_list: &[f64], data_list: &[InitialData], template: &SweepTemplate) -> Result<SweepResult> {
    if p_list.is_empty() || data_list.is_empty() {
        return Err(invalid("sweep", "p_list and data_list must be nonempty"));
    }
    let pairs: Vec<(f64, InitialData)> = p_list
        .iter()
        .flat_map(|&p| data_list.iter().map(move |d| (p, *d)))
        .collect();
    let rows = pairs
        .par_iter()
        .map(|&(p, data)| {
            let cfg = template.config_for(p, &data);
            let u0 = make_initial(&data, cfg.grid)?;
            let run = run_to_verdict(&cfg, &u0)?;
            Ok(SweepRow {
                p,
                data,
                verdict: run.verdict,
                regime: regime(p),
                warnings: run.warnings,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult { rows })
}
