//! Numerical audit of the blowup argument: the two exponent inequalities,
//! the kernel convolution lower bound, the `I₁` lower bound, the exponent
//! case split, the ODE contradiction for `G`, and the logarithmic gain at
//! the critical exponent. Unnamed proof constants are measured as infima
//! over seeded sample sweeps.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, require_positive, Result};
use crate::fd::{run_to_verdict, Boundary, FdConfig, FUJITA_EXPONENT};
use crate::grid::{make_initial, Grid2D, InitialData};
use crate::kernel::{kernel_density, kernel_gradient, GaussianFactor, KernelVariant, SpacePoint, StartPoint};
use crate::quadrature::{integrate, integrate_2d, integrate_2d_region, QuadSpec};
use crate::stats::{linear_fit, LinearFit};

/// Absolute tolerance on the exponent-inequality margins.
pub const MARGIN_TOLERANCE: f64 = 1e-12;

/// Exponents closer than this to `5/3` are treated as critical.
pub const CRITICAL_TOLERANCE: f64 = 1e-12;

/// Smallest admissible `(t − s)/t` for the convolution ratio.
pub const MIN_LAG_FRACTION: f64 = 1e-3;

const CHUNK: usize = 1 << 14;

fn rng_for(seed: u64, tag: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(stream);
    rng
}

/// Uniform on `(lo, hi]`.
fn open_left(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    hi - (hi - lo) * rng.random::<f64>()
}

fn check_times(s: f64, t: f64) -> Result<()> {
    require_positive("t", t)?;
    if !(s > 0.0 && s < t) {
        return Err(invalid("s", format!("must lie in (0, t) = (0, {t}), got {s}")));
    }
    Ok(())
}

/// `[y²/s − x²/t − (x−y)²/(t−s)] − [−2(x−y)²/(t−s)]`, claimed `≥ 0`.
pub fn exponent_inequality_x1(s: f64, t: f64, x1: f64, y1: f64) -> Result<f64> {
    check_times(s, t)?;
    let d = x1 - y1;
    let lhs = y1 * y1 / s - x1 * x1 / t - d * d / (t - s);
    let rhs = -2.0 * d * d / (t - s);
    Ok(lhs - rhs)
}

/// `[y²/s² − x²/t² − (x−y)²/(t−s)²] − [−2(x−y)²/(t−s)²]`, claimed `≥ 0`.
pub fn exponent_inequality_x2(s: f64, t: f64, x2: f64, y2: f64) -> Result<f64> {
    check_times(s, t)?;
    let d = x2 - y2;
    let ts = (t - s) * (t - s);
    let lhs = y2 * y2 / (s * s) - x2 * x2 / (t * t) - d * d / ts;
    let rhs = -2.0 * d * d / ts;
    Ok(lhs - rhs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InequalityAxis {
    X1,
    X2,
}

impl InequalityAxis {
    pub fn check_name(self) -> &'static str {
        match self {
            InequalityAxis::X1 => "exponent_inequality_x1",
            InequalityAxis::X2 => "exponent_inequality_x2",
        }
    }

    fn margin(self, s: f64, t: f64, x: f64, y: f64) -> Result<f64> {
        match self {
            InequalityAxis::X1 => exponent_inequality_x1(s, t, x, y),
            InequalityAxis::X2 => exponent_inequality_x2(s, t, x, y),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MarginSample {
    pub s: f64,
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub margin: f64,
}

/// Margins at `n` seeded samples with `t ~ U(0, t_max]`, `s ~ U(0, t)`
/// and `|x|, |y| ≤ bound`, in sample order.
pub fn inequality_margins(axis: InequalityAxis, n: usize, seed: u64, t_max: f64, bound: f64) -> Result<Vec<MarginSample>> {
    require_positive("t_max", t_max)?;
    require_positive("bound", bound)?;
    let tag = match axis {
        InequalityAxis::X1 => 1,
        InequalityAxis::X2 => 2,
    };
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<Vec<MarginSample>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_for(seed, tag, c as u64);
            let len = CHUNK.min(n - c * CHUNK);
            let mut out = Vec::with_capacity(len);
            while out.len() < len {
                let t = open_left(&mut rng, 0.0, t_max);
                let s = t * rng.random::<f64>();
                let x = rng.random_range(-bound..=bound);
                let y = rng.random_range(-bound..=bound);
                if !(s > 0.0 && s < t) {
                    continue;
                }
                let margin = axis.margin(s, t, x, y)?;
                out.push(MarginSample { s, t, x, y, margin });
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(parts.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditCheck {
    pub name: String,
    pub samples: usize,
    pub min_margin: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Arguments of the sample attaining the minimum.
    pub worst_sample: Vec<f64>,
    /// Same as `worst_sample`, present only when the check fails.
    pub offending: Option<Vec<f64>>,
}

impl AuditCheck {
    /// Builds a check from `(margin, arguments)` pairs; the first minimum
    /// wins ties.
    pub fn from_margins<'a, I>(name: &str, tolerance: f64, margins: I) -> Self
    where
        I: IntoIterator<Item = (f64, &'a [f64])>,
    {
        let mut samples = 0;
        let mut min_margin = f64::INFINITY;
        let mut worst = Vec::new();
        for (m, args) in margins {
            samples += 1;
            if m < min_margin || m.is_nan() {
                min_margin = m;
                worst = args.to_vec();
            }
        }
        let pass = samples > 0 && min_margin >= -tolerance;
        Self {
            name: name.to_string(),
            samples,
            min_margin,
            tolerance,
            pass,
            offending: (!pass).then(|| worst.clone()),
            worst_sample: worst,
        }
    }

    fn single(name: &str, margin: f64, tolerance: f64, args: &[f64]) -> Self {
        Self::from_margins(name, tolerance, [(margin, args)])
    }
}

pub fn inequality_check(axis: InequalityAxis, margins: &[MarginSample]) -> AuditCheck {
    let args: Vec<[f64; 4]> = margins.iter().map(|m| [m.s, m.t, m.x, m.y]).collect();
    AuditCheck::from_margins(
        axis.check_name(),
        MARGIN_TOLERANCE,
        margins.iter().zip(&args).map(|(m, a)| (m.margin, a.as_slice())),
    )
}

/// `name,s,t,x,y,margin` rows.
pub fn write_margins_csv<W: Write>(rows: &[(&str, &[MarginSample])], mut out: W) -> std::io::Result<()> {
    writeln!(out, "check,s,t,x,y,margin")?;
    for (name, samples) in rows {
        for m in *samples {
            writeln!(out, "{name},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}", m.s, m.t, m.x, m.y, m.margin)?;
        }
    }
    Ok(())
}

fn ln_kernel(f: &(GaussianFactor, GaussianFactor), q: SpacePoint) -> f64 {
    f.0.ln_density(q.x1) + f.1.ln_density(q.x2)
}

/// `∫K(t, x)K(t − s, x − y)dx / (K(s, y)·(s/t)^{3/2})` by adaptive 2-D
/// quadrature. The integral is evaluated relative to the peak of the
/// integrand and combined in log space, so the ratio is `+∞` only when it
/// genuinely exceeds the `f64` range.
pub fn convolution_lower_ratio(s: f64, t: f64, y: SpacePoint, variant: KernelVariant) -> Result<f64> {
    check_times(s, t)?;
    if (t - s) / t < MIN_LAG_FRACTION {
        return Err(invalid("s", format!("t − s must be at least {MIN_LAG_FRACTION}·t")));
    }
    let ft = variant.axis_factors(t)?;
    let fl = variant.axis_factors(t - s)?;
    let fs = variant.axis_factors(s)?;
    // Per axis the integrand is exp(−αx² − β(x − y)²) up to constants.
    let peak = |a: &GaussianFactor, b: &GaussianFactor, yk: f64| {
        let (alpha, beta) = (0.5 / a.variance, 0.5 / b.variance);
        let centre = beta * yk / (alpha + beta);
        let sd = (0.5 / (alpha + beta)).sqrt();
        (centre, sd, a.ln_density(centre) + b.ln_density(centre - yk))
    };
    let (c1, sd1, l1) = peak(&ft.0, &fl.0, y.x1);
    let (c2, sd2, l2) = peak(&ft.1, &fl.1, y.x2);
    let ln_peak = l1 + l2;
    const SPAN: f64 = 10.0;
    let spec = QuadSpec {
        abs_tol: 0.0,
        rel_tol: 1e-10,
        max_intervals: 4000,
        initial_panels: 4,
    };
    let r = integrate_2d(
        |x1, x2| {
            let x = SpacePoint::new(x1, x2);
            let q = SpacePoint::new(x1 - y.x1, x2 - y.x2);
            (ln_kernel(&ft, x) + ln_kernel(&fl, q) - ln_peak).exp()
        },
        (c1 - SPAN * sd1, c1 + SPAN * sd1),
        (c2 - SPAN * sd2, c2 + SPAN * sd2),
        &spec,
    )?;
    let ln_ratio = ln_peak + r.value.ln() - ln_kernel(&fs, y) - 1.5 * (s / t).ln();
    Ok(ln_ratio.exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct I1Check {
    pub lhs: f64,
    pub rhs_shape: f64,
    pub ratio: f64,
}

/// `I₁(t, x) = ∫_{|y|<1} K(t, x − y)dy` (unit ball data) against the
/// shape `t^{−3/2} exp(−2x₁²/t − 2x₂²/t²)`.
pub fn i1_lower_check(t: f64, x: SpacePoint, variant: KernelVariant) -> Result<I1Check> {
    if !(t > 1.0) || !t.is_finite() {
        return Err(invalid("t", format!("the lower bound is claimed only for t > 1, got {t}")));
    }
    if !x.is_finite() {
        return Err(invalid("x", "coordinates must be finite"));
    }
    let f = variant.axis_factors(t)?;
    let ln_shape = -1.5 * t.ln() - 2.0 * x.x1 * x.x1 / t - 2.0 * x.x2 * x.x2 / (t * t);
    let spec = QuadSpec {
        abs_tol: 0.0,
        rel_tol: 1e-10,
        max_intervals: 2000,
        initial_panels: 4,
    };
    // Integrate K/shape so that far-field points stay representable.
    let r = integrate_2d_region(
        |y1, y2| (ln_kernel(&f, SpacePoint::new(x.x1 - y1, x.x2 - y2)) - ln_shape).exp(),
        (-1.0, 1.0),
        |y1| {
            let h = (1.0 - y1 * y1).max(0.0).sqrt();
            (-h, h)
        },
        &spec,
    )?;
    let rhs_shape = ln_shape.exp();
    Ok(I1Check {
        lhs: r.value * rhs_shape,
        rhs_shape,
        ratio: r.value,
    })
}

/// `t^{3/2}∫I₁(t, x)K(t, x)dx` for unit ball data, using the closed form
/// of `K(t)∗K(t)` and quadrature over the ball.
pub fn i1_g_profile(t: f64, variant: KernelVariant) -> Result<f64> {
    let (f1, f2) = variant.axis_factors(t)?;
    let g1 = GaussianFactor {
        mass: f1.mass * f1.mass,
        variance: 2.0 * f1.variance,
    };
    let g2 = GaussianFactor {
        mass: 1.0,
        variance: 2.0 * f2.variance,
    };
    let r = integrate_2d_region(
        |y1, y2| g1.density(y1) * g2.density(y2),
        (-1.0, 1.0),
        |y1| {
            let h = (1.0 - y1 * y1).max(0.0).sqrt();
            (-h, h)
        },
        &QuadSpec {
            abs_tol: 0.0,
            rel_tol: 1e-10,
            ..QuadSpec::default()
        },
    )?;
    Ok(t.powf(1.5) * r.value)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExponentCase {
    /// `p ≤ 1 + 2/(3p)`: the comparison integral diverges.
    DivergentIntegral,
    /// `1 + 2/(3p) < p < 5/3`.
    PowerComparison,
    Critical,
    BeyondTheorem,
}

pub fn exponent_case(p: f64) -> Result<ExponentCase> {
    if !(p > 1.0) || !p.is_finite() {
        return Err(invalid("p", format!("must exceed 1, got {p}")));
    }
    // 3p(p − 1)/2 ≤ 1 is p ≤ 1 + 2/(3p) multiplied through by 3p/2 > 0.
    if 1.5 * p * (p - 1.0) <= 1.0 + 1e-12 {
        Ok(ExponentCase::DivergentIntegral)
    } else if (p - FUJITA_EXPONENT).abs() <= CRITICAL_TOLERANCE {
        Ok(ExponentCase::Critical)
    } else if p < FUJITA_EXPONENT {
        Ok(ExponentCase::PowerComparison)
    } else {
        Ok(ExponentCase::BeyondTheorem)
    }
}

/// `3(p−1)²/2 − (3p(p−1)/2 − 1)`, positive throughout the
/// power-comparison range.
pub fn power_comparison_gap(p: f64) -> f64 {
    1.5 * (p - 1.0) * (p - 1.0) - (1.5 * p * (p - 1.0) - 1.0)
}

/// `∫ₜᵀ s^e ds` in closed form.
pub fn power_integral(e: f64, t: f64, big_t: f64) -> Result<f64> {
    require_positive("t", t)?;
    if !(big_t >= t) {
        return Err(invalid("T", "must be at least t"));
    }
    let k = e + 1.0;
    let log_ratio = (big_t / t).ln();
    if k == 0.0 {
        Ok(log_ratio)
    } else {
        Ok(t.powf(k) * (k * log_ratio).exp_m1() / k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OdeContradiction {
    pub lhs: f64,
    pub rhs: f64,
}

/// `lhs = c2^{1−p}/(p−1)·t^{−3(p−1)²/2}` and
/// `rhs = c3·∫ₜᵀ s^{3p(1−p)/2} ds`; a contradiction is `rhs > lhs`.
pub fn g_ode_contradiction(p: f64, c2: f64, c3: f64, t: f64, big_t: f64) -> Result<OdeContradiction> {
    match exponent_case(p)? {
        ExponentCase::DivergentIntegral | ExponentCase::PowerComparison => {}
        other => return Err(invalid("p", format!("comparison applies only below 5/3, got {other:?}"))),
    }
    require_positive("c2", c2)?;
    require_positive("c3", c3)?;
    if !(t >= 1.0 && big_t > t) {
        return Err(invalid("t", format!("need 1 ≤ t < T, got t = {t}, T = {big_t}")));
    }
    let lhs = c2.powf(1.0 - p) / (p - 1.0) * t.powf(-1.5 * (p - 1.0) * (p - 1.0));
    let rhs = c3 * power_integral(1.5 * p * (1.0 - p), t, big_t)?;
    Ok(OdeContradiction { lhs, rhs })
}

/// In the power-comparison case, the `t` beyond which the `T → ∞` limit
/// of the right side exceeds the left side.
pub fn power_comparison_threshold(p: f64, c2: f64, c3: f64) -> Result<f64> {
    if exponent_case(p)? != ExponentCase::PowerComparison {
        return Err(invalid("p", "threshold exists only in the power-comparison case"));
    }
    require_positive("c2", c2)?;
    require_positive("c3", c3)?;
    let alpha = 1.5 * (p - 1.0) * (p - 1.0);
    let beta = 1.5 * p * (p - 1.0) - 1.0;
    let a = c2.powf(1.0 - p) / (p - 1.0);
    let b = c3 / beta;
    Ok((a / b).powf(1.0 / (alpha - beta)))
}

/// Fit of `t^{3/2}G(t)` against `log t`.
pub fn critical_log_check(points: &[(f64, f64)]) -> Result<LinearFit> {
    if points.iter().any(|&(t, g)| !(t > 2.0) || !g.is_finite()) {
        return Err(invalid("points", "need t > 2 and finite G"));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1 * p.0.powf(1.5)).collect();
    linear_fit(&xs, &ys).ok_or_else(|| invalid("points", "need at least two distinct times"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CriticalRunConfig {
    /// Height of the ball data; small enough that the run reaches the
    /// last sample time.
    pub amplitude: f64,
    pub grid: Grid2D,
}

impl Default for CriticalRunConfig {
    fn default() -> Self {
        Self {
            amplitude: 0.2,
            grid: Grid2D {
                l1: 8.0,
                l2: 24.0,
                n1: 64,
                n2: 96,
            },
        }
    }
}

/// `(t, G(t))` near each requested time from a finite-difference run at
/// `p = 5/3` with ball data.
pub fn critical_g_samples(t_list: &[f64], run: &CriticalRunConfig, variant: KernelVariant) -> Result<Vec<(f64, f64)>> {
    let t_end = t_list.iter().cloned().fold(f64::NAN, f64::max);
    require_positive("t_list", t_end)?;
    let cfg = FdConfig {
        output_interval: Some(0.25),
        g_variant: variant,
        blow_threshold: 1e8,
        ..FdConfig::new(run.grid, FUJITA_EXPONENT, Boundary::Dirichlet0, t_end)
    };
    let u0 = make_initial(&InitialData::Ball { c1: run.amplitude }, run.grid)?;
    let out = run_to_verdict(&cfg, &u0)?;
    t_list
        .iter()
        .map(|&t| {
            out.diagnostics
                .iter()
                .find(|d| d.t >= t - 1e-9)
                .and_then(|d| d.g.map(|g| (d.t, g)))
                .ok_or_else(|| invalid("t_list", format!("run ended before t = {t}")))
        })
        .collect()
}

/// Lower bound of `I₂` at the critical exponent from `u ≥ I₁`:
/// `∫₁^{t/2} s^{−3p/2} ∫K(t−s, x−y)exp(−2p y₁²/s − 2p y₂²/s²)dy ds`, with
/// the inner integral in closed form.
pub fn critical_i2_bound(t: f64, x: SpacePoint, variant: KernelVariant) -> Result<f64> {
    if !(t > 2.0) {
        return Err(invalid("t", "needs t > 2"));
    }
    let p = FUJITA_EXPONENT;
    let inner = |s: f64| -> f64 {
        let Ok((k1, k2)) = variant.axis_factors(t - s) else {
            return f64::NAN;
        };
        let v1 = s / (4.0 * p);
        let v2 = s * s / (4.0 * p);
        let a = GaussianFactor {
            mass: k1.mass * (2.0 * std::f64::consts::PI * v1).sqrt(),
            variance: k1.variance + v1,
        };
        let b = GaussianFactor {
            mass: (2.0 * std::f64::consts::PI * v2).sqrt(),
            variance: k2.variance + v2,
        };
        s.powf(-1.5 * p) * a.density(x.x1) * b.density(x.x2)
    };
    let r = integrate(inner, 1.0, 0.5 * t, &QuadSpec {
        abs_tol: 0.0,
        rel_tol: 1e-10,
        ..QuadSpec::default()
    })?;
    Ok(r.value)
}

/// The first comparison form of the critical `I₂` bound, without its
/// constant: `t^{−3/2}e^{−φ}∫₁^{t/2} t^{3/2}s^{−5/2}(t−s)^{−3/2}Y ds`, where
/// `φ = x₁²/t + x₂²/t²` and `Y` is the Gaussian `dy` integral of that form.
pub fn critical_i2_comparison_form(t: f64, x: SpacePoint) -> Result<f64> {
    if !(t > 2.0) {
        return Err(invalid("t", "needs t > 2"));
    }
    let p = FUJITA_EXPONENT;
    let (x1s, x2s) = (x.x1 * x.x1, x.x2 * x.x2);
    let phi = x1s / t + x2s / (t * t);
    let pi = std::f64::consts::PI;
    let integrand = |s: f64| -> f64 {
        let l = t - s;
        let y = (phi - x1s / l - x2s / (l * l)).exp()
            * (pi / (1.0 / l + 2.0 * p / s)).sqrt()
            * (pi / (1.0 / (l * l) + 2.0 * p / (s * s))).sqrt();
        t.powf(1.5) * s.powf(-2.5) * l.powf(-1.5) * y
    };
    let r = integrate(integrand, 1.0, 0.5 * t, &QuadSpec {
        abs_tol: 0.0,
        rel_tol: 1e-10,
        ..QuadSpec::default()
    })?;
    Ok(t.powf(-1.5) * (-phi).exp() * r.value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradientDiscrepancy {
    /// `−(x₂/t²)K`, the second component as printed.
    pub printed: f64,
    pub exact: f64,
    /// `printed / exact`; `None` on the axis `x₂ = 0` where both vanish.
    pub ratio: Option<f64>,
    pub exact_match_at_zero: bool,
}

pub fn gradient_formula_discrepancy(t: f64, x: SpacePoint) -> Result<GradientDiscrepancy> {
    if x.x1 == 0.0 && x.x2 == 0.0 {
        return Err(invalid("x", "must differ from the origin"));
    }
    let variant = KernelVariant::PaperFormula;
    let k = kernel_density(variant, t, x, StartPoint::ORIGIN)?;
    let exact = kernel_gradient(variant, t, x, StartPoint::ORIGIN)?[1];
    let printed = -x.x2 / (t * t) * k;
    let on_axis = x.x2 == 0.0;
    Ok(GradientDiscrepancy {
        printed,
        exact,
        ratio: (!on_axis && exact != 0.0).then(|| printed / exact),
        exact_match_at_zero: on_axis && printed == 0.0 && exact == 0.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_inequality_samples")]
    pub inequality_samples: usize,
    #[serde(default = "default_quadrature_samples")]
    pub quadrature_samples: usize,
    #[serde(default)]
    pub variant: KernelVariant,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    #[serde(default = "default_coord_bound")]
    pub coord_bound: f64,
    #[serde(default = "default_critical_times")]
    pub critical_times: Vec<f64>,
    #[serde(default = "default_critical_amplitude")]
    pub critical_amplitude: f64,
}

fn default_seed() -> u64 {
    20_240_601
}
fn default_inequality_samples() -> usize {
    1_000_000
}
fn default_quadrature_samples() -> usize {
    48
}
fn default_t_max() -> f64 {
    10.0
}
fn default_coord_bound() -> f64 {
    10.0
}
fn default_critical_times() -> Vec<f64> {
    vec![3.0, 4.0, 6.0, 8.0]
}
fn default_critical_amplitude() -> f64 {
    0.2
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            seed: default_seed(),
            inequality_samples: default_inequality_samples(),
            quadrature_samples: default_quadrature_samples(),
            variant: KernelVariant::default(),
            t_max: default_t_max(),
            coord_bound: default_coord_bound(),
            critical_times: default_critical_times(),
            critical_amplitude: default_critical_amplitude(),
        }
    }
}

impl AuditConfig {
    pub fn validate(&self) -> Result<()> {
        if self.inequality_samples == 0 || self.quadrature_samples == 0 {
            return Err(invalid("samples", "sample counts must be positive"));
        }
        require_positive("t_max", self.t_max)?;
        require_positive("coord_bound", self.coord_bound)?;
        require_positive("critical_amplitude", self.critical_amplitude)?;
        if self.critical_times.len() < 2 || self.critical_times.iter().any(|&t| !(t > 2.0 && t.is_finite())) {
            return Err(invalid("critical_times", "need at least two finite times above 2"));
        }
        Ok(())
    }
}

/// Measured values of the proof's unnamed positive constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProofConstants {
    /// `inf I₁/shape` over the sampled `(t, x)`.
    pub c1: f64,
    /// `inf t^{3/2}∫I₁K dx` over the sampled `t`.
    pub c2: f64,
    /// `inf` of the convolution ratio.
    pub c3: f64,
    /// `inf` of the critical `I₂` bound over its first comparison form.
    pub c4: f64,
    /// `inf t^{3/2}e^{φ}I₂/log(t/2)` over the sampled `(t, x)`.
    pub c5: f64,
    /// Slope of `t^{3/2}G` against `log t` in the critical run.
    pub c6: f64,
    /// `inf ½t^{3/2}G/log t` over the critical sample times.
    pub c7: f64,
}

impl ProofConstants {
    pub fn as_array(&self) -> [(&'static str, f64); 7] {
        [
            ("c1", self.c1),
            ("c2", self.c2),
            ("c3", self.c3),
            ("c4", self.c4),
            ("c5", self.c5),
            ("c6", self.c6),
            ("c7", self.c7),
        ]
    }

    pub fn all_positive(&self) -> bool {
        self.as_array().iter().all(|&(_, v)| v > 0.0 && v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseRow {
    pub p: f64,
    pub case: ExponentCase,
    pub expected: ExponentCase,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub config: AuditConfig,
    pub checks: Vec<AuditCheck>,
    pub constants: ProofConstants,
    pub exponent_cases: Vec<CaseRow>,
    pub power_comparison_threshold_p16: f64,
    pub critical_fit: LinearFit,
    pub critical_g: Vec<(f64, f64)>,
    pub gradient: Vec<GradientDiscrepancy>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&AuditCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone)]
pub struct AuditRun {
    pub report: AuditReport,
    pub x1_margins: Vec<MarginSample>,
    pub x2_margins: Vec<MarginSample>,
}

/// Seeded `(t, x)` samples shared by the quadrature-based checks.
fn quadrature_points(seed: u64, tag: u64, n: usize, t_range: (f64, f64), bound: f64) -> Vec<(f64, SpacePoint)> {
    let mut rng = rng_for(seed, tag, 0);
    (0..n)
        .map(|_| {
            let t = open_left(&mut rng, t_range.0, t_range.1);
            let x1 = rng.random_range(-bound..=bound);
            let x2 = rng.random_range(-bound..=bound);
            (t, SpacePoint::new(x1, x2))
        })
        .collect()
}

fn min_positive_check(name: &str, values: &[(f64, Vec<f64>)]) -> (AuditCheck, f64) {
    let check = AuditCheck::from_margins(name, 0.0, values.iter().map(|(v, a)| (*v, a.as_slice())));
    // Positivity is strict: a zero infimum fails.
    let pass = check.pass && check.min_margin > 0.0;
    let min = check.min_margin;
    (
        AuditCheck {
            pass,
            offending: (!pass).then(|| check.worst_sample.clone()),
            ..check
        },
        min,
    )
}

pub fn run_audit(cfg: &AuditConfig) -> Result<AuditRun> {
    cfg.validate()?;
    let variant = cfg.variant;
    let mut checks = Vec::new();

    let x1_margins = inequality_margins(InequalityAxis::X1, cfg.inequality_samples, cfg.seed, cfg.t_max, cfg.coord_bound)?;
    let x2_margins = inequality_margins(InequalityAxis::X2, cfg.inequality_samples, cfg.seed, cfg.t_max, cfg.coord_bound)?;
    checks.push(inequality_check(InequalityAxis::X1, &x1_margins));
    checks.push(inequality_check(InequalityAxis::X2, &x2_margins));

    let n = cfg.quadrature_samples;

    // c1: I₁ against its shape, t ∈ (1, t_max], |x| ≤ bound.
    let pts = quadrature_points(cfg.seed, 11, n, (1.0, cfg.t_max.max(1.0 + 1e-9)), cfg.coord_bound);
    let i1: Vec<(f64, Vec<f64>)> = pts
        .par_iter()
        .map(|&(t, x)| i1_lower_check(t, x, variant).map(|c| (c.ratio, vec![t, x.x1, x.x2])))
        .collect::<Result<_>>()?;
    let (check, c1) = min_positive_check("i1_lower_bound", &i1);
    checks.push(check);

    // c2: t^{3/2}∫I₁K, t ∈ (1, t_max].
    let mut rng = rng_for(cfg.seed, 12, 0);
    let ts: Vec<f64> = (0..n).map(|_| open_left(&mut rng, 1.0, cfg.t_max.max(1.0 + 1e-9))).collect();
    let g_profile: Vec<(f64, Vec<f64>)> = ts
        .par_iter()
        .map(|&t| i1_g_profile(t, variant).map(|v| (v, vec![t])))
        .collect::<Result<_>>()?;
    let (check, c2) = min_positive_check("i1_g_lower_bound", &g_profile);
    checks.push(check);

    // c3: convolution ratio, t ∈ (0, t_max], s/t ∈ (0.01, 0.99), |y| ≤ bound.
    let mut rng = rng_for(cfg.seed, 13, 0);
    let conv_pts: Vec<(f64, f64, SpacePoint)> = (0..n)
        .map(|_| {
            let t = open_left(&mut rng, 0.0, cfg.t_max);
            let s = t * rng.random_range(0.01..0.99);
            let y = SpacePoint::new(
                rng.random_range(-cfg.coord_bound..=cfg.coord_bound),
                rng.random_range(-cfg.coord_bound..=cfg.coord_bound),
            );
            (s, t, y)
        })
        .collect();
    let mut conv: Vec<(f64, Vec<f64>)> = conv_pts
        .par_iter()
        .map(|&(s, t, y)| convolution_lower_ratio(s, t, y, variant).map(|r| (r, vec![s, t, y.x1, y.x2])))
        .collect::<Result<_>>()?;
    for &(s, t) in &[(0.25, 1.0), (0.5, 1.0), (1.0, 2.0)] {
        let r = convolution_lower_ratio(s, t, SpacePoint::new(0.0, 0.0), variant)?;
        conv.push((r, vec![s, t, 0.0, 0.0]));
    }
    let (check, c3) = min_positive_check("convolution_lower_ratio", &conv);
    checks.push(check);

    // c4, c5: the critical I₂ bound on t ∈ (2.5, t_max], |x| ≤ 3.
    let crit_pts = quadrature_points(cfg.seed, 14, n, (2.5, cfg.t_max.max(2.5 + 1e-9)), 3.0);
    let crit: Vec<(f64, f64, Vec<f64>)> = crit_pts
        .par_iter()
        .map(|&(t, x)| {
            let j = critical_i2_bound(t, x, variant)?;
            let form = critical_i2_comparison_form(t, x)?;
            let phi = x.x1 * x.x1 / t + x.x2 * x.x2 / (t * t);
            let c5 = j * t.powf(1.5) * phi.exp() / (0.5 * t).ln();
            Ok((j / form, c5, vec![t, x.x1, x.x2]))
        })
        .collect::<Result<_>>()?;
    let c4_vals: Vec<(f64, Vec<f64>)> = crit.iter().map(|(a, _, v)| (*a, v.clone())).collect();
    let c5_vals: Vec<(f64, Vec<f64>)> = crit.iter().map(|(_, b, v)| (*b, v.clone())).collect();
    let (check, c4) = min_positive_check("critical_i2_comparison", &c4_vals);
    checks.push(check);
    let (check, c5) = min_positive_check("critical_i2_log_bound", &c5_vals);
    checks.push(check);

    // c6, c7: the logarithmic gain of G at p = 5/3.
    let run = CriticalRunConfig {
        amplitude: cfg.critical_amplitude,
        ..CriticalRunConfig::default()
    };
    let critical_g = critical_g_samples(&cfg.critical_times, &run, variant)?;
    let critical_fit = critical_log_check(&critical_g)?;
    let c6 = critical_fit.slope;
    checks.push(AuditCheck::single("critical_log_slope", c6, 0.0, &[critical_fit.r_squared]));
    let c7 = critical_g
        .iter()
        .map(|&(t, g)| 0.5 * t.powf(1.5) * g / t.ln())
        .fold(f64::INFINITY, f64::min);

    // Exponent cases at hand-checked points.
    let boundary = (3.0 + 33f64.sqrt()) / 6.0;
    let expected = [
        (1.4, ExponentCase::DivergentIntegral),
        (boundary, ExponentCase::DivergentIntegral),
        (1.6, ExponentCase::PowerComparison),
        (FUJITA_EXPONENT, ExponentCase::Critical),
        (2.0, ExponentCase::BeyondTheorem),
    ];
    let exponent_cases: Vec<CaseRow> = expected
        .iter()
        .map(|&(p, e)| exponent_case(p).map(|case| CaseRow { p, case, expected: e }))
        .collect::<Result<_>>()?;
    let mismatches = exponent_cases.iter().filter(|r| r.case != r.expected).count();
    checks.push(AuditCheck::single("exponent_cases", -(mismatches as f64), 0.0, &[]));
    let gap = power_comparison_gap(1.6);
    checks.push(AuditCheck::single("power_comparison_gap_p1.6", gap, 0.0, &[1.6]));

    // Closed-form power integrals against adaptive quadrature.
    let mut rng = rng_for(cfg.seed, 15, 0);
    let mut rel_errs = Vec::new();
    for _ in 0..100 {
        let p = rng.random_range(1.05..1.66);
        let t = rng.random_range(1.0..10.0);
        let big_t = t * rng.random_range(1.5..100.0);
        let e = 1.5 * p * (1.0 - p);
        let closed = power_integral(e, t, big_t)?;
        let quad = integrate(|s| s.powf(e), t, big_t, &QuadSpec {
            abs_tol: 0.0,
            rel_tol: 1e-13,
            ..QuadSpec::default()
        })?;
        rel_errs.push((1e-10 - (closed / quad.value - 1.0).abs(), vec![p, t, big_t]));
    }
    checks.push(AuditCheck::from_margins(
        "power_integral_closed_form",
        0.0,
        rel_errs.iter().map(|(m, a)| (*m, a.as_slice())),
    ));

    let divergent = g_ode_contradiction(1.4, 1.0, 1.0, 1.0, 1e6)?;
    checks.push(AuditCheck::single(
        "divergent_case_contradiction_p1.4",
        divergent.rhs - divergent.lhs,
        0.0,
        &[divergent.lhs, divergent.rhs],
    ));
    let threshold = power_comparison_threshold(1.6, 1.0, 1.0)?;

    let gradient: Vec<GradientDiscrepancy> = [(1.0, 0.0, 1.0), (2.0, 0.0, 3.0), (1.5, 0.7, -2.0), (1.0, 1.0, 0.0)]
        .iter()
        .map(|&(t, a, b)| gradient_formula_discrepancy(t, SpacePoint::new(a, b)))
        .collect::<Result<_>>()?;
    let worst_ratio = gradient
        .iter()
        .filter_map(|g| g.ratio)
        .map(|r| (r - 0.5).abs())
        .fold(0.0, f64::max);
    checks.push(AuditCheck::single("gradient_ratio_half", 1e-9 - worst_ratio, 0.0, &[worst_ratio]));

    let constants = ProofConstants { c1, c2, c3, c4, c5, c6, c7 };
    checks.push(AuditCheck::single(
        "constants_positive",
        if constants.all_positive() { 1.0 } else { -1.0 },
        0.0,
        &constants.as_array().map(|c| c.1),
    ));

    Ok(AuditRun {
        report: AuditReport {
            config: cfg.clone(),
            checks,
            constants,
            exponent_cases,
            power_comparison_threshold_p16: threshold,
            critical_fit,
            critical_g,
            gradient,
        },
        x1_margins,
        x2_margins,
    })
}
