//! Heat kernel of the Grushin operator `½(∂²₁ + x₁²∂²₂)` in the explicit
//! Gaussian form, together with the moment-matched bivariate normal and a
//! unit-mass rescaling of the explicit form.
//!
//! All three densities share the shape
//!
//! ```text
//! K(t, x; μ) = A · t^{-3/2} · exp(−a·q₁²/t − (μ₁q₁ − q₂)²/t²),   q = x − μ
//! ```
//!
//! and differ only in `(A, a)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, require_finite, require_positive, LabError, Result};
use crate::quadrature::{integrate_2d, QuadSpec};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SpacePoint {
    pub x1: f64,
    pub x2: f64,
}

impl SpacePoint {
    pub const fn new(x1: f64, x2: f64) -> Self {
        Self { x1, x2 }
    }

    pub fn is_finite(&self) -> bool {
        self.x1.is_finite() && self.x2.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StartPoint {
    pub mu1: f64,
    pub mu2: f64,
}

impl StartPoint {
    pub const ORIGIN: StartPoint = StartPoint { mu1: 0.0, mu2: 0.0 };

    pub const fn new(mu1: f64, mu2: f64) -> Self {
        Self { mu1, mu2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum KernelVariant {
    /// The explicit formula exactly as written (total mass ½).
    #[default]
    PaperFormula,
    /// Bivariate normal with the mean and covariance of the diffusion.
    MomentGaussian,
    /// `PaperFormula` rescaled to unit mass.
    UnitPaperFormula,
}

impl KernelVariant {
    pub const ALL: [KernelVariant; 3] = [
        KernelVariant::PaperFormula,
        KernelVariant::MomentGaussian,
        KernelVariant::UnitPaperFormula,
    ];

    /// `(A, a)` in the shared shape above.
    fn shape(self) -> (f64, f64) {
        match self {
            KernelVariant::PaperFormula => (1.0 / (2.0 * PI), 1.0),
            KernelVariant::UnitPaperFormula => (1.0 / PI, 1.0),
            KernelVariant::MomentGaussian => (1.0 / (2.0_f64.sqrt() * PI), 0.5),
        }
    }

    /// Closed-form total mass over the plane.
    pub fn total_mass(self) -> f64 {
        let (amp, a) = self.shape();
        amp * PI / a.sqrt()
    }

    /// Factorization of `K(t, q; 0)` into two one-dimensional Gaussians in
    /// `q₁` and `q₂`. The first factor carries the total mass, the second is
    /// a probability density.
    pub fn axis_factors(self, t: f64) -> Result<(GaussianFactor, GaussianFactor)> {
        require_positive("t", t)?;
        let (_, a) = self.shape();
        Ok((
            GaussianFactor {
                mass: self.total_mass(),
                variance: t / (2.0 * a),
            },
            GaussianFactor {
                mass: 1.0,
                variance: 0.5 * t * t,
            },
        ))
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelVariant::PaperFormula => "PaperFormula",
            KernelVariant::MomentGaussian => "MomentGaussian",
            KernelVariant::UnitPaperFormula => "UnitPaperFormula",
        }
    }
}

/// `mass · N(q; 0, variance)` on the real line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianFactor {
    pub mass: f64,
    pub variance: f64,
}

impl GaussianFactor {
    pub fn density(&self, q: f64) -> f64 {
        self.mass * (-0.5 * q * q / self.variance).exp() / (2.0 * PI * self.variance).sqrt()
    }

    /// `ln density(q)`, finite where the density itself underflows.
    pub fn ln_density(&self, q: f64) -> f64 {
        self.mass.ln() - 0.5 * q * q / self.variance - 0.5 * (2.0 * PI * self.variance).ln()
    }

    /// Exact integral over `[lo, hi]`.
    pub fn integral(&self, lo: f64, hi: f64) -> f64 {
        let s = (2.0 * self.variance).sqrt();
        let (zl, zh) = (lo / s, hi / s);
        // Use erfc on the far side of the mean to keep tail cells accurate.
        let frac = if zl >= 0.0 {
            0.5 * (libm::erfc(zl) - libm::erfc(zh))
        } else if zh <= 0.0 {
            0.5 * (libm::erfc(-zh) - libm::erfc(-zl))
        } else {
            0.5 * (libm::erf(zh) - libm::erf(zl))
        };
        self.mass * frac
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
    pub t: f64,
}

impl MomentSummary {
    pub fn det(&self) -> f64 {
        self.cov[0][0] * self.cov[1][1] - self.cov[0][1] * self.cov[1][0]
    }

    pub fn std_devs(&self) -> [f64; 2] {
        [self.cov[0][0].sqrt(), self.cov[1][1].sqrt()]
    }
}

/// Mean and covariance of `(X¹_t, X²_t)` started at `mu`.
pub fn moments(t: f64, mu: StartPoint) -> Result<MomentSummary> {
    require_positive("t", t)?;
    require_finite("mu1", mu.mu1)?;
    require_finite("mu2", mu.mu2)?;
    let c12 = mu.mu1 * t;
    Ok(MomentSummary {
        mean: [mu.mu1, mu.mu2],
        cov: [[t, c12], [c12, mu.mu1 * mu.mu1 * t + 0.5 * t * t]],
        t,
    })
}

fn check_args(t: f64, x: SpacePoint, mu: StartPoint) -> Result<()> {
    require_positive("t", t)?;
    if !x.is_finite() {
        return Err(invalid("x", "coordinates must be finite"));
    }
    if !(mu.mu1.is_finite() && mu.mu2.is_finite()) {
        return Err(invalid("mu", "coordinates must be finite"));
    }
    Ok(())
}

// Exponent pieces shared by density and gradient: (q₁, μ₁q₁ − q₂).
#[inline]
fn offsets(x: SpacePoint, mu: StartPoint) -> (f64, f64) {
    let q1 = x.x1 - mu.mu1;
    let q2 = x.x2 - mu.mu2;
    (q1, mu.mu1 * q1 - q2)
}

#[inline]
fn density_unchecked(variant: KernelVariant, t: f64, x: SpacePoint, mu: StartPoint) -> f64 {
    let (amp, a) = variant.shape();
    let (q1, r) = offsets(x, mu);
    amp * t.powf(-1.5) * (-a * q1 * q1 / t - r * r / (t * t)).exp()
}

pub fn kernel_density(variant: KernelVariant, t: f64, x: SpacePoint, mu: StartPoint) -> Result<f64> {
    check_args(t, x, mu)?;
    Ok(density_unchecked(variant, t, x, mu))
}

/// Exact spatial gradient `(∂ₓ₁K, ∂ₓ₂K)` of the selected density.
pub fn kernel_gradient(variant: KernelVariant, t: f64, x: SpacePoint, mu: StartPoint) -> Result<[f64; 2]> {
    check_args(t, x, mu)?;
    let (_, a) = variant.shape();
    let k = density_unchecked(variant, t, x, mu);
    let (q1, r) = offsets(x, mu);
    let t2 = t * t;
    Ok([
        k * (-2.0 * a * q1 / t - 2.0 * mu.mu1 * r / t2),
        k * (2.0 * r / t2),
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MassEstimate {
    pub value: f64,
    pub error: f64,
}

/// Numerical mass of the density over `mean ± 8σ` per axis, with σ taken
/// from the diffusion covariance (which dominates all three variants).
pub fn kernel_mass(variant: KernelVariant, t: f64, mu: StartPoint, quad: &QuadSpec) -> Result<MassEstimate> {
    let m = moments(t, mu)?;
    let [s1, s2] = m.std_devs();
    const SPAN: f64 = 8.0;
    let r = integrate_2d(
        |x1, x2| density_unchecked(variant, t, SpacePoint::new(x1, x2), mu),
        (mu.mu1 - SPAN * s1, mu.mu1 + SPAN * s1),
        (mu.mu2 - SPAN * s2, mu.mu2 + SPAN * s2),
        quad,
    )?;
    Ok(MassEstimate {
        value: r.value,
        error: r.error,
    })
}

/// Anisotropic dilation `(t, x₁, x₂) ↦ (λ²t, λx₁, λ²x₂)`.
pub fn parabolic_rescale(lambda: f64, t: f64, x: SpacePoint) -> Result<(f64, SpacePoint)> {
    require_positive("lambda", lambda)?;
    require_positive("t", t)?;
    let l2 = lambda * lambda;
    Ok((l2 * t, SpacePoint::new(lambda * x.x1, l2 * x.x2)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualSteps {
    pub t: f64,
    pub x1: f64,
    pub x2: f64,
}

impl Default for ResidualSteps {
    fn default() -> Self {
        Self {
            t: 0.05,
            x1: 0.05,
            x2: 0.05,
        }
    }
}

impl ResidualSteps {
    fn scaled(&self, f: f64) -> Self {
        Self {
            t: self.t * f,
            x1: self.x1 * f,
            x2: self.x2 * f,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualEstimate {
    /// Richardson-extrapolated residual.
    pub value: f64,
    /// `|R(h/4) − R(h/2)| / 3`.
    pub error: f64,
    /// Observed convergence order `log₂(|R(h) − R(h/2)| / |R(h/2) − R(h/4)|)`;
    /// NaN when the differences vanish.
    pub order: f64,
    /// Raw stencil values at `h`, `h/2`, `h/4`.
    pub raw: [f64; 3],
}

fn residual_stencil(variant: KernelVariant, t: f64, x: SpacePoint, mu: StartPoint, h: &ResidualSteps) -> f64 {
    let k = |tt: f64, a: f64, b: f64| density_unchecked(variant, tt, SpacePoint::new(a, b), mu);
    let center = k(t, x.x1, x.x2);
    let dt = (k(t + h.t, x.x1, x.x2) - k(t - h.t, x.x1, x.x2)) / (2.0 * h.t);
    let d11 = (k(t, x.x1 + h.x1, x.x2) - 2.0 * center + k(t, x.x1 - h.x1, x.x2)) / (h.x1 * h.x1);
    let d22 = (k(t, x.x1, x.x2 + h.x2) - 2.0 * center + k(t, x.x1, x.x2 - h.x2)) / (h.x2 * h.x2);
    dt - 0.5 * (d11 + x.x1 * x.x1 * d22)
}

/// Central-difference estimate of `∂ₜK − ½(∂²₁K + x₁²∂²₂K)`.
pub fn pde_residual(
    variant: KernelVariant,
    t: f64,
    x: SpacePoint,
    mu: StartPoint,
    h: &ResidualSteps,
) -> Result<ResidualEstimate> {
    check_args(t, x, mu)?;
    require_positive("h.t", h.t)?;
    require_positive("h.x1", h.x1)?;
    require_positive("h.x2", h.x2)?;
    if h.t >= t {
        return Err(LabError::InvalidArgument {
            name: "h.t",
            reason: format!("time step {} must be smaller than t = {t}", h.t),
        });
    }
    let r1 = residual_stencil(variant, t, x, mu, h);
    let r2 = residual_stencil(variant, t, x, mu, &h.scaled(0.5));
    let r4 = residual_stencil(variant, t, x, mu, &h.scaled(0.25));
    let (d12, d24) = ((r1 - r2).abs(), (r2 - r4).abs());
    let order = if d12 > 0.0 && d24 > 0.0 {
        (d12 / d24).log2()
    } else {
        f64::NAN
    };
    Ok(ResidualEstimate {
        value: r4 + (r4 - r2) / 3.0,
        error: d24 / 3.0,
        order,
        raw: [r1, r2, r4],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const P: KernelVariant = KernelVariant::PaperFormula;
    const MG: KernelVariant = KernelVariant::MomentGaussian;

    // Textbook bivariate normal density, written independently of the
    // shared-shape evaluation.
    fn bivariate_normal(m: &MomentSummary, x: SpacePoint) -> f64 {
        let det = m.det();
        let (d1, d2) = (x.x1 - m.mean[0], x.x2 - m.mean[1]);
        let q = (m.cov[1][1] * d1 * d1 - 2.0 * m.cov[0][1] * d1 * d2 + m.cov[0][0] * d2 * d2) / det;
        (-0.5 * q).exp() / (2.0 * PI * det.sqrt())
    }

    #[test]
    fn moments_examples() {
        let m = moments(1.0, StartPoint::new(2.0, 0.0)).unwrap();
        assert_eq!(m.mean, [2.0, 0.0]);
        assert_eq!(m.cov, [[1.0, 2.0], [2.0, 4.5]]);
        let m = moments(2.0, StartPoint::new(0.0, 5.0)).unwrap();
        assert_eq!(m.mean, [0.0, 5.0]);
        assert_eq!(m.cov, [[2.0, 0.0], [0.0, 2.0]]);
        for mu1 in [-3.0, 0.0, 0.7, 11.0] {
            let m = moments(1.0, StartPoint::new(mu1, 1.0)).unwrap();
            assert!((m.det() - 0.5).abs() < 1e-12);
        }
        assert!(moments(0.0, StartPoint::ORIGIN).is_err());
        assert!(moments(-1.0, StartPoint::ORIGIN).is_err());
    }

    #[test]
    fn density_examples() {
        let k = kernel_density(P, 1.0, SpacePoint::new(0.0, 0.0), StartPoint::ORIGIN).unwrap();
        assert!((k - 0.159_154_943_091_895_3).abs() < 1e-15);
        let k = kernel_density(P, 1.0, SpacePoint::new(1.0, 0.0), StartPoint::ORIGIN).unwrap();
        assert!((k - (-1.0f64).exp() / (2.0 * PI)).abs() < 1e-15);
        assert!((k - 0.058_550).abs() < 1e-6);
        let k = kernel_density(MG, 1.0, SpacePoint::new(0.0, 0.0), StartPoint::ORIGIN).unwrap();
        assert!((k - 2f64.sqrt() / (2.0 * PI)).abs() < 1e-15);
        assert!((k - 0.225_079).abs() < 1e-6);
        assert!(kernel_density(P, 0.0, SpacePoint::default(), StartPoint::ORIGIN).is_err());
    }

    #[test]
    fn unit_variant_is_twice_base_formula() {
        let x = SpacePoint::new(0.3, -1.2);
        let mu = StartPoint::new(1.5, 0.4);
        let p = kernel_density(P, 2.5, x, mu).unwrap();
        let u = kernel_density(KernelVariant::UnitPaperFormula, 2.5, x, mu).unwrap();
        assert!((u - 2.0 * p).abs() <= 1e-15 * u);
    }

    #[test]
    fn moment_gaussian_matches_textbook_density() {
        for &(t, mu1, mu2, x1, x2) in &[
            (1.0, 0.0, 0.0, 0.3, 0.4),
            (3.0, 1.0, -2.0, 2.0, 1.0),
            (0.2, -2.5, 1.0, -2.0, 2.0),
        ] {
            let mu = StartPoint::new(mu1, mu2);
            let x = SpacePoint::new(x1, x2);
            let m = moments(t, mu).unwrap();
            let k = kernel_density(MG, t, x, mu).unwrap();
            assert!((k - bivariate_normal(&m, x)).abs() <= 1e-13 * k.max(1e-300));
        }
    }

    #[test]
    fn gradient_examples() {
        let mu = StartPoint::ORIGIN;
        let x = SpacePoint::new(1.0, 0.0);
        let k = kernel_density(P, 1.0, x, mu).unwrap();
        let g = kernel_gradient(P, 1.0, x, mu).unwrap();
        assert!((g[0] + 2.0 * k).abs() < 1e-15);
        assert!((g[0] + 0.117_100).abs() < 1e-6);
        let x = SpacePoint::new(0.0, 1.0);
        let g = kernel_gradient(P, 1.0, x, mu).unwrap();
        assert!((g[1] + 0.117_100).abs() < 1e-6);
        for v in KernelVariant::ALL {
            let mu = StartPoint::new(0.7, -1.1);
            let at = SpacePoint::new(mu.mu1, mu.mu2);
            assert_eq!(kernel_gradient(v, 1.7, at, mu).unwrap(), [0.0, 0.0]);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cases = [(1.0, 0.4, -0.3, 0.2, 0.1), (2.0, 1.3, 2.0, 1.0, -1.0), (0.5, -0.2, 0.6, -1.5, 0.0)];
        for v in KernelVariant::ALL {
            for &(t, x1, x2, mu1, mu2) in &cases {
                let mu = StartPoint::new(mu1, mu2);
                let g = kernel_gradient(v, t, SpacePoint::new(x1, x2), mu).unwrap();
                let h = 1e-5;
                let f = |a: f64, b: f64| kernel_density(v, t, SpacePoint::new(a, b), mu).unwrap();
                let fd1 = (f(x1 + h, x2) - f(x1 - h, x2)) / (2.0 * h);
                let fd2 = (f(x1, x2 + h) - f(x1, x2 - h)) / (2.0 * h);
                let scale = g[0].abs().max(g[1].abs());
                assert!((g[0] - fd1).abs() <= 1e-6 * scale, "{v:?} {t} d1 {} vs {}", g[0], fd1);
                assert!((g[1] - fd2).abs() <= 1e-6 * scale, "{v:?} {t} d2 {} vs {}", g[1], fd2);
            }
        }
    }

    #[test]
    fn mass_examples() {
        let q = QuadSpec::default();
        let m = kernel_mass(P, 1.0, StartPoint::ORIGIN, &q).unwrap();
        assert!((m.value - 0.5).abs() < 1e-8, "{m:?}");
        let m = kernel_mass(MG, 3.0, StartPoint::new(1.0, -2.0), &q).unwrap();
        assert!((m.value - 1.0).abs() < 1e-8, "{m:?}");
        let m = kernel_mass(P, 5.0, StartPoint::new(2.0, 1.0), &q).unwrap();
        assert!((m.value - 0.5).abs() < 1e-8, "{m:?}");
        let m = kernel_mass(KernelVariant::UnitPaperFormula, 2.0, StartPoint::new(-1.0, 3.0), &q).unwrap();
        assert!((m.value - 1.0).abs() < 1e-8, "{m:?}");
    }

    #[test]
    fn closed_form_masses() {
        assert!((P.total_mass() - 0.5).abs() < 1e-15);
        assert!((MG.total_mass() - 1.0).abs() < 1e-15);
        assert!((KernelVariant::UnitPaperFormula.total_mass() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn axis_factors_reproduce_density_at_origin_start() {
        for v in KernelVariant::ALL {
            let t = 1.3;
            let (f1, f2) = v.axis_factors(t).unwrap();
            for &(a, b) in &[(0.0, 0.0), (0.5, -1.0), (-2.0, 0.3)] {
                let k = kernel_density(v, t, SpacePoint::new(a, b), StartPoint::ORIGIN).unwrap();
                let prod = f1.density(a) * f2.density(b);
                assert!((k - prod).abs() <= 1e-14 * k);
            }
            assert!((f1.integral(-50.0, 50.0) * f2.integral(-50.0, 50.0) - v.total_mass()).abs() < 1e-14);
        }
    }

    #[test]
    fn factor_tail_cells_keep_precision() {
        let f = GaussianFactor {
            mass: 1.0,
            variance: 1.0,
        };
        let far = f.integral(9.0, 9.5);
        let expected = 0.5 * (libm::erfc(9.0 / 2f64.sqrt()) - libm::erfc(9.5 / 2f64.sqrt()));
        assert!(far > 0.0 && (far - expected).abs() <= 1e-12 * expected);
        assert!((f.integral(-9.5, -9.0) - far).abs() <= 1e-12 * far);
    }

    #[test]
    fn rescale_examples() {
        let (t, x) = parabolic_rescale(2.0, 1.0, SpacePoint::new(1.0, 1.0)).unwrap();
        assert_eq!((t, x), (4.0, SpacePoint::new(2.0, 4.0)));
        let (t, x) = parabolic_rescale(1.0, 0.7, SpacePoint::new(-0.3, 2.2)).unwrap();
        assert_eq!((t, x), (0.7, SpacePoint::new(-0.3, 2.2)));
        let (t, x) = parabolic_rescale(3.0, 2.0, SpacePoint::new(0.0, 0.0)).unwrap();
        assert_eq!((t, x), (18.0, SpacePoint::new(0.0, 0.0)));
        assert!(parabolic_rescale(0.0, 1.0, SpacePoint::default()).is_err());
    }

    #[test]
    fn residual_of_base_formula_at_origin() {
        let r = pde_residual(P, 1.0, SpacePoint::default(), StartPoint::ORIGIN, &ResidualSteps::default()).unwrap();
        assert!((r.value + 1.0 / (4.0 * PI)).abs() < 1e-6, "{r:?}");
        assert!((r.order - 2.0).abs() < 0.2, "{r:?}");
    }

    #[test]
    fn residual_of_moment_gaussian_is_nonzero() {
        let r = pde_residual(MG, 1.0, SpacePoint::default(), StartPoint::ORIGIN, &ResidualSteps::default()).unwrap();
        // ∂ₜK = −(3/2)K, ∂²₁K = −K at the origin for t = 1, so the residual is −K.
        let k = 2f64.sqrt() / (2.0 * PI);
        assert!((r.value + k).abs() < 1e-6, "{r:?}");
    }

    #[test]
    fn residual_rejects_large_time_step() {
        let h = ResidualSteps {
            t: 1.0,
            ..ResidualSteps::default()
        };
        let err = pde_residual(P, 1.0, SpacePoint::default(), StartPoint::ORIGIN, &h).unwrap_err();
        assert!(matches!(err, LabError::InvalidArgument { name: "h.t", .. }));
    }

    proptest! {
        #[test]
        // t ≥ 1 keeps the exponent above the f64 underflow threshold here.
        fn density_is_positive(t in 1.0f64..10.0, x1 in -3.0f64..3.0, x2 in -3.0f64..3.0,
                               m1 in -2.0f64..2.0, m2 in -2.0f64..2.0) {
            for v in KernelVariant::ALL {
                prop_assert!(kernel_density(v, t, SpacePoint::new(x1, x2), StartPoint::new(m1, m2)).unwrap() > 0.0);
            }
        }

        #[test]
        fn central_symmetry(t in 0.1f64..5.0, a in -3.0f64..3.0, b in -3.0f64..3.0,
                            m1 in -2.0f64..2.0, m2 in -2.0f64..2.0) {
            let mu = StartPoint::new(m1, m2);
            for v in [P, MG] {
                let plus = kernel_density(v, t, SpacePoint::new(m1 + a, m2 + b), mu).unwrap();
                let minus = kernel_density(v, t, SpacePoint::new(m1 - a, m2 - b), mu).unwrap();
                prop_assert!((plus - minus).abs() <= 1e-12 * plus.max(minus));
            }
        }

        #[test]
        fn det_cov_is_half_t_cubed(t in 1e-3f64..20.0, mu1 in -10.0f64..10.0) {
            let m = moments(t, StartPoint::new(mu1, 0.0)).unwrap();
            prop_assert!((m.det() - 0.5 * t.powi(3)).abs() <= 1e-10 * (t.powi(3) + mu1 * mu1 * t * t));
            prop_assert_eq!(m.cov[0][1], m.cov[1][0]);
            prop_assert!(m.cov[0][0] >= 0.0 && m.det() >= 0.0);
        }
    }

    #[test]
    fn log_density_matches_density() {
        let (f1, f2) = KernelVariant::PaperFormula.axis_factors(2.0).unwrap();
        for q in [-3.0, 0.0, 0.7, 5.0] {
            assert!((f1.ln_density(q).exp() - f1.density(q)).abs() < 1e-15);
            assert!((f2.ln_density(q).exp() - f2.density(q)).abs() < 1e-15);
        }
        assert!(f2.ln_density(1e3).is_finite());
    }
}
