//! Globally adaptive Gauss–Kronrod (7/15) quadrature on finite intervals,
//! plus nested tensor-product integration in two dimensions.

use std::cell::Cell;
use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{LabError, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_225,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];

// Gauss weights for XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadSpec {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
    /// Uniform panels the interval is cut into before adaptive refinement.
    pub initial_panels: usize,
}

impl Default for QuadSpec {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 0.0,
            max_intervals: 2000,
            initial_panels: 8,
        }
    }
}

impl QuadSpec {
    pub fn with_abs_tol(abs_tol: f64) -> Self {
        Self {
            abs_tol,
            ..Self::default()
        }
    }

    fn target(&self, value: f64) -> f64 {
        self.abs_tol.max(self.rel_tol * value.abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    /// Estimated absolute error.
    pub error: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Panel {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for k in 0..7 {
        let dx = half * XGK[k];
        let sum = f(center - dx) + f(center + dx);
        kronrod += WGK[k] * sum;
        if k % 2 == 1 {
            gauss += WG[k / 2] * sum;
        }
    }
    Panel {
        a,
        b,
        value: kronrod * half,
        error: ((kronrod - gauss) * half).abs(),
    }
}

/// Integrates `f` over `[a, b]`.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, spec: &QuadSpec) -> Result<QuadResult> {
    if a == b {
        return Ok(QuadResult {
            value: 0.0,
            error: 0.0,
            evaluations: 0,
        });
    }
    let panels = spec.initial_panels.max(1);
    let width = (b - a) / panels as f64;
    let mut heap = BinaryHeap::with_capacity(2 * panels);
    for k in 0..panels {
        let lo = a + width * k as f64;
        let hi = if k + 1 == panels { b } else { lo + width };
        heap.push(gk15(&mut f, lo, hi));
    }
    let mut evaluations = 15 * panels;
    loop {
        let (value, error) = heap
            .iter()
            .fold((0.0, 0.0), |(v, e), p| (v + p.value, e + p.error));
        if error <= spec.target(value) {
            return Ok(QuadResult {
                value,
                error,
                evaluations,
            });
        }
        if heap.len() >= spec.max_intervals {
            return Err(LabError::QuadratureNotConverged {
                achieved: error,
                requested: spec.target(value),
                intervals: heap.len(),
            });
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Interval cannot be split further in floating point.
            return Err(LabError::QuadratureNotConverged {
                achieved: error,
                requested: spec.target(value),
                intervals: heap.len() + 1,
            });
        }
        heap.push(gk15(&mut f, worst.a, mid));
        heap.push(gk15(&mut f, mid, worst.b));
        evaluations += 30;
    }
}

/// Iterated integral `∫_{a1}^{b1} ∫_{lo(x1)}^{hi(x1)} f(x1, x2) dx2 dx1`.
///
/// Half of the absolute tolerance goes to the outer integral, the other half
/// is spread over the inner integrals.
pub fn integrate_2d_region<F, L>(f: F, x1_range: (f64, f64), inner_limits: L, spec: &QuadSpec) -> Result<QuadResult>
where
    F: Fn(f64, f64) -> f64,
    L: Fn(f64) -> (f64, f64),
{
    let (a1, b1) = x1_range;
    let outer_spec = QuadSpec {
        abs_tol: 0.5 * spec.abs_tol,
        ..*spec
    };
    let inner_spec = QuadSpec {
        abs_tol: 0.5 * spec.abs_tol / (b1 - a1).abs().max(1.0),
        ..*spec
    };
    let failure: Cell<Option<LabError>> = Cell::new(None);
    let worst_inner = Cell::new(0.0_f64);
    let inner_evals = Cell::new(0_usize);
    let outer = integrate(
        |x1| {
            let (lo, hi) = inner_limits(x1);
            match integrate(|x2| f(x1, x2), lo, hi, &inner_spec) {
                Ok(r) => {
                    worst_inner.set(worst_inner.get().max(r.error));
                    inner_evals.set(inner_evals.get() + r.evaluations);
                    r.value
                }
                Err(e) => {
                    let first = failure.take().unwrap_or(e);
                    failure.set(Some(first));
                    0.0
                }
            }
        },
        a1,
        b1,
        &outer_spec,
    )?;
    if let Some(e) = failure.take() {
        return Err(e);
    }
    Ok(QuadResult {
        value: outer.value,
        error: outer.error + (b1 - a1).abs() * worst_inner.get(),
        evaluations: outer.evaluations + inner_evals.get(),
    })
}

/// Tensor-product iterated integral over a rectangle.
pub fn integrate_2d<F: Fn(f64, f64) -> f64>(
    f: F,
    x1_range: (f64, f64),
    x2_range: (f64, f64),
    spec: &QuadSpec,
) -> Result<QuadResult> {
    integrate_2d_region(f, x1_range, |_| x2_range, spec)
}
