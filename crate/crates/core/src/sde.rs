//! Euler–Maruyama simulation of the diffusion
//!
//! ```text
//! dX¹ = dW¹,   dX² = X¹ dW²,   (X¹₀, X²₀) = (μ₁, μ₂)
//! ```
//!
//! whose generator is the Grushin operator, with either independent or
//! shared Brownian drivers. Each path owns a ChaCha8 stream selected by its
//! index, so a run is reproducible bit for bit regardless of how paths are
//! scheduled across workers.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, require_positive, LabError, Result};
use crate::kernel::{kernel_density, moments, KernelVariant, MomentSummary, SpacePoint, StartPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum NoiseCoupling {
    /// `W¹` and `W²` independent (the reading forced by the generator).
    #[default]
    IndependentPair,
    /// `W¹ = W²` (the reading that reproduces the off-diagonal covariance `μ₁t`).
    SharedSingle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub t_end: f64,
    pub dt: f64,
    pub n_paths: u64,
    pub seed: u64,
    pub coupling: NoiseCoupling,
    pub mu: StartPoint,
    /// Pair path `2k+1` with path `2k` using negated increments.
    #[serde(default)]
    pub antithetic: bool,
}

impl SimConfig {
    /// Number of Euler steps; `t_end / dt` must be an integer.
    pub fn n_steps(&self) -> Result<usize> {
        require_positive("t_end", self.t_end)?;
        require_positive("dt", self.dt)?;
        if self.dt > self.t_end {
            return Err(invalid("dt", format!("dt = {} exceeds t_end = {}", self.dt, self.t_end)));
        }
        let ratio = self.t_end / self.dt;
        let steps = ratio.round();
        if (ratio - steps).abs() > 1e-9 * ratio {
            return Err(invalid("dt", format!("t_end / dt = {ratio} is not an integer")));
        }
        Ok(steps as usize)
    }

    pub fn validate(&self) -> Result<usize> {
        let steps = self.n_steps()?;
        if self.n_paths == 0 {
            return Err(invalid("n_paths", "must be positive"));
        }
        if self.antithetic && self.n_paths % 2 == 1 {
            return Err(invalid("n_paths", "must be even for antithetic sampling"));
        }
        if !(self.mu.mu1.is_finite() && self.mu.mu2.is_finite()) {
            return Err(invalid("mu", "coordinates must be finite"));
        }
        Ok(steps)
    }
}

fn simulate_path(base: &ChaCha8Rng, cfg: &SimConfig, steps: usize, path: u64) -> Result<SpacePoint> {
    let (stream, sign) = if cfg.antithetic {
        (path / 2, if path.is_multiple_of(2) { 1.0 } else { -1.0 })
    } else {
        (path, 1.0)
    };
    let mut rng = base.clone();
    rng.set_stream(stream);
    let scale = sign * cfg.dt.sqrt();
    // X¹ = μ₁ + w with w the running Brownian sum, so antithetic partners
    // carry exactly negated w.
    let mut w = 0.0_f64;
    let mut x2 = cfg.mu.mu2;
    match cfg.coupling {
        NoiseCoupling::SharedSingle => {
            for _ in 0..steps {
                let dw = scale * rng.sample::<f64, _>(StandardNormal);
                x2 += (cfg.mu.mu1 + w) * dw;
                w += dw;
            }
        }
        NoiseCoupling::IndependentPair => {
            for _ in 0..steps {
                let dw1 = scale * rng.sample::<f64, _>(StandardNormal);
                let dw2 = scale * rng.sample::<f64, _>(StandardNormal);
                x2 += (cfg.mu.mu1 + w) * dw2;
                w += dw1;
            }
        }
    }
    let end = SpacePoint::new(cfg.mu.mu1 + w, x2);
    if end.is_finite() {
        Ok(end)
    } else {
        Err(LabError::NonFinitePath { path, step: steps })
    }
}

/// Endpoints `(X¹_{t_end}, X²_{t_end})` of `n_paths` independent paths,
/// ordered by path index.
pub fn simulate_endpoints(cfg: &SimConfig) -> Result<Vec<SpacePoint>> {
    let steps = cfg.validate()?;
    let base = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.n_paths)
        .into_par_iter()
        .map(|path| simulate_path(&base, cfg, steps, path))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmpiricalMoments {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
    pub se_mean: [f64; 2],
    pub se_cov: [[f64; 2]; 2],
    /// Sample excess kurtosis per coordinate (0 for a normal law).
    pub excess_kurtosis: [f64; 2],
    pub n_paths: usize,
    /// Time the samples were taken at, when known.
    pub t: Option<f64>,
}

/// Unbiased sample mean and covariance with analytic standard errors.
/// The reduction runs sequentially in sample order.
pub fn empirical_moments(samples: &[SpacePoint]) -> Result<EmpiricalMoments> {
    let n = samples.len();
    if n < 2 {
        return Err(invalid("samples", format!("need at least 2 samples, got {n}")));
    }
    let nf = n as f64;
    let (mut s1, mut s2) = (0.0, 0.0);
    for p in samples {
        s1 += p.x1;
        s2 += p.x2;
    }
    let mean = [s1 / nf, s2 / nf];

    // Sums of centered products and of their squares for the SEs.
    let mut c = [0.0; 3];
    let mut cc = [0.0; 3];
    let mut m4 = [0.0; 2];
    for p in samples {
        let d1 = p.x1 - mean[0];
        let d2 = p.x2 - mean[1];
        let prods = [d1 * d1, d1 * d2, d2 * d2];
        for k in 0..3 {
            c[k] += prods[k];
            cc[k] += prods[k] * prods[k];
        }
        m4[0] += prods[0] * prods[0];
        m4[1] += prods[2] * prods[2];
    }
    let cov_k: Vec<f64> = c.iter().map(|s| s / (nf - 1.0)).collect();
    let se_k: Vec<f64> = (0..3)
        .map(|k| {
            let m = c[k] / nf;
            let var = ((cc[k] / nf - m * m) * nf / (nf - 1.0)).max(0.0);
            (var / nf).sqrt()
        })
        .collect();
    let kurt = |m4: f64, m2: f64| {
        if m2 > 0.0 {
            (m4 / nf) / (m2 / nf).powi(2) - 3.0
        } else {
            0.0
        }
    };
    Ok(EmpiricalMoments {
        mean,
        cov: [[cov_k[0], cov_k[1]], [cov_k[1], cov_k[2]]],
        se_mean: [(cov_k[0] / nf).sqrt(), (cov_k[2] / nf).sqrt()],
        se_cov: [[se_k[0], se_k[1]], [se_k[1], se_k[2]]],
        excess_kurtosis: [kurt(m4[0], c[0]), kurt(m4[1], c[2])],
        n_paths: n,
        t: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentZScores {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

impl MomentZScores {
    pub fn max_abs(&self) -> f64 {
        [self.mean[0], self.mean[1], self.cov[0][0], self.cov[0][1], self.cov[1][1]]
            .iter()
            .fold(0.0_f64, |m, z| m.max(z.abs()))
    }
}

/// `(empirical − analytic) / SE` for every mean and covariance entry.
pub fn moment_zscores(emp: &EmpiricalMoments, analytic: &MomentSummary) -> Result<MomentZScores> {
    if let Some(t) = emp.t {
        if (t - analytic.t).abs() > 1e-12 * t.abs().max(1.0) {
            return Err(invalid("analytic", format!("time {} differs from sample time {t}", analytic.t)));
        }
    }
    let z = |e: f64, a: f64, se: f64| -> Result<f64> {
        if se > 0.0 {
            Ok((e - a) / se)
        } else {
            Err(invalid("emp", "zero standard error"))
        }
    };
    let mut cov = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            cov[i][j] = z(emp.cov[i][j], analytic.cov[i][j], emp.se_cov[i][j])?;
        }
    }
    Ok(MomentZScores {
        mean: [
            z(emp.mean[0], analytic.mean[0], emp.se_mean[0])?,
            z(emp.mean[1], analytic.mean[1], emp.se_mean[1])?,
        ],
        cov,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurveResidual {
    pub max: f64,
    pub mean: f64,
}

/// Distance of shared-driver samples from the Itô curve
/// `x₂ = μ₂ + μ₁(x₁ − μ₁) + ((x₁ − μ₁)² − t)/2`.
pub fn curve_residual(samples: &[SpacePoint], mu: StartPoint, t: f64) -> CurveResidual {
    let mut max: f64 = 0.0;
    let mut sum = 0.0;
    for p in samples {
        let q1 = p.x1 - mu.mu1;
        let r = (p.x2 - mu.mu2 - mu.mu1 * q1 - 0.5 * (q1 * q1 - t)).abs();
        max = max.max(r);
        sum += r;
    }
    CurveResidual {
        max,
        mean: if samples.is_empty() { 0.0 } else { sum / samples.len() as f64 },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramGrid {
    pub x1: (f64, f64),
    pub x2: (f64, f64),
    pub n1: usize,
    pub n2: usize,
}

impl HistogramGrid {
    /// Box `mean ± span·σ` from the diffusion moments.
    pub fn covering(t: f64, mu: StartPoint, span: f64, n1: usize, n2: usize) -> Result<Self> {
        let m = moments(t, mu)?;
        let [s1, s2] = m.std_devs();
        Ok(Self {
            x1: (mu.mu1 - span * s1, mu.mu1 + span * s1),
            x2: (mu.mu2 - span * s2, mu.mu2 + span * s2),
            n1,
            n2,
        })
    }

    fn widths(&self) -> (f64, f64) {
        (
            (self.x1.1 - self.x1.0) / self.n1 as f64,
            (self.x2.1 - self.x2.0) / self.n2 as f64,
        )
    }

    fn cell_of(&self, p: SpacePoint) -> Option<(usize, usize)> {
        let (h1, h2) = self.widths();
        let i = ((p.x1 - self.x1.0) / h1).floor();
        let j = ((p.x2 - self.x2.0) / h2).floor();
        if i >= 0.0 && j >= 0.0 && (i as usize) < self.n1 && (j as usize) < self.n2 {
            Some((i as usize, j as usize))
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DensityCell {
    pub i: usize,
    pub j: usize,
    pub x1: f64,
    pub x2: f64,
    pub kernel_mass: f64,
    pub empirical_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityDistance {
    /// L1 distance in `[0, 2]`, including one cell for everything off-grid.
    pub distance: f64,
    pub cells: Vec<DensityCell>,
}

const GL5_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GL5_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];

/// L1 distance between the cell masses of the kernel (5×5 Gauss–Legendre
/// per cell) and the normalized sample histogram.
pub fn density_distance(
    samples: &[SpacePoint],
    variant: KernelVariant,
    t: f64,
    mu: StartPoint,
    grid: &HistogramGrid,
) -> Result<DensityDistance> {
    if grid.n1 == 0 || grid.n2 == 0 {
        return Err(invalid("grid", "needs at least one cell per axis"));
    }
    let m = moments(t, mu)?;
    let [s1, s2] = m.std_devs();
    const MIN_SPAN: f64 = 6.0 - 1e-9;
    if grid.x1.0 > mu.mu1 - MIN_SPAN * s1
        || grid.x1.1 < mu.mu1 + MIN_SPAN * s1
        || grid.x2.0 > mu.mu2 - MIN_SPAN * s2
        || grid.x2.1 < mu.mu2 + MIN_SPAN * s2
    {
        return Err(invalid("grid", "must cover at least 6 standard deviations per axis"));
    }
    let (h1, h2) = grid.widths();
    let n = samples.len().max(1) as f64;
    let mut counts = vec![0u64; grid.n1 * grid.n2];
    for p in samples {
        if let Some((i, j)) = grid.cell_of(*p) {
            counts[i * grid.n2 + j] += 1;
        }
    }
    let cells: Vec<DensityCell> = (0..grid.n1 * grid.n2)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / grid.n2, idx % grid.n2);
            let c1 = grid.x1.0 + (i as f64 + 0.5) * h1;
            let c2 = grid.x2.0 + (j as f64 + 0.5) * h2;
            let mut mass = 0.0;
            for (a, wa) in GL5_NODES.iter().zip(GL5_WEIGHTS) {
                for (b, wb) in GL5_NODES.iter().zip(GL5_WEIGHTS) {
                    let x = SpacePoint::new(c1 + 0.5 * h1 * a, c2 + 0.5 * h2 * b);
                    // Arguments were validated above.
                    mass += wa * wb * kernel_density(variant, t, x, mu).unwrap_or(0.0);
                }
            }
            DensityCell {
                i,
                j,
                x1: c1,
                x2: c2,
                kernel_mass: mass * 0.25 * h1 * h2,
                empirical_mass: counts[idx] as f64 / n,
            }
        })
        .collect();
    let (mut on_grid_kernel, mut on_grid_emp, mut dist) = (0.0, 0.0, 0.0);
    for c in &cells {
        on_grid_kernel += c.kernel_mass;
        on_grid_emp += c.empirical_mass;
        dist += (c.kernel_mass - c.empirical_mass).abs();
    }
    dist += ((1.0 - on_grid_kernel).max(0.0) - (1.0 - on_grid_emp).max(0.0)).abs();
    Ok(DensityDistance { distance: dist, cells })
}

/// Writes `path_id,x1,x2` rows.
pub fn write_samples_csv<W: Write>(samples: &[SpacePoint], mut out: W) -> std::io::Result<()> {
    writeln!(out, "path_id,x1,x2")?;
    for (k, p) in samples.iter().enumerate() {
        writeln!(out, "{k},{:.16e},{:.16e}", p.x1, p.x2)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(coupling: NoiseCoupling, n_paths: u64, dt: f64) -> SimConfig {
        SimConfig {
            t_end: 1.0,
            dt,
            n_paths,
            seed: 7,
            coupling,
            mu: StartPoint::new(1.0, 0.0),
            antithetic: false,
        }
    }

    #[test]
    fn config_validation() {
        let mut c = cfg(NoiseCoupling::SharedSingle, 10, 0.3);
        assert!(c.validate().is_err());
        c.dt = 0.25;
        assert_eq!(c.validate().unwrap(), 4);
        c.dt = 2.0;
        assert!(c.validate().is_err());
        c.dt = 0.5;
        c.n_paths = 0;
        assert!(c.validate().is_err());
        c.n_paths = 3;
        c.antithetic = true;
        assert!(c.validate().is_err());
    }

    #[test]
    fn deterministic_given_seed_and_independent_of_workers() {
        let c = cfg(NoiseCoupling::IndependentPair, 500, 0.01);
        let a = simulate_endpoints(&c).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| simulate_endpoints(&c)).unwrap();
        assert_eq!(a, b);
        let other = simulate_endpoints(&SimConfig { seed: 8, ..c }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn identical_samples_have_zero_spread() {
        let s = vec![SpacePoint::new(1.5, -2.0); 10];
        let m = empirical_moments(&s).unwrap();
        assert_eq!(m.mean, [1.5, -2.0]);
        assert_eq!(m.cov, [[0.0; 2]; 2]);
        assert_eq!(m.se_mean, [0.0, 0.0]);
        assert!(empirical_moments(&[]).is_err());
        assert!(empirical_moments(&s[..1]).is_err());
    }

    #[test]
    fn antithetic_pairs_center_x1() {
        let c = SimConfig {
            antithetic: true,
            mu: StartPoint::new(0.75, 0.0),
            ..cfg(NoiseCoupling::SharedSingle, 2000, 0.01)
        };
        let s = simulate_endpoints(&c).unwrap();
        for pair in s.chunks(2) {
            assert!((pair[0].x1 + pair[1].x1 - 1.5).abs() < 1e-12);
        }
        let m = empirical_moments(&s).unwrap();
        assert!((m.mean[0] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn zscores() {
        let a = moments(1.0, StartPoint::new(1.0, 0.0)).unwrap();
        let emp = EmpiricalMoments {
            mean: a.mean,
            cov: a.cov,
            se_mean: [0.1, 0.1],
            se_cov: [[0.1; 2]; 2],
            excess_kurtosis: [0.0; 2],
            n_paths: 100,
            t: Some(1.0),
        };
        assert_eq!(moment_zscores(&emp, &a).unwrap().max_abs(), 0.0);
        let zero_se = EmpiricalMoments { se_mean: [0.0, 0.1], ..emp };
        assert!(moment_zscores(&zero_se, &a).is_err());
        let later = moments(2.0, StartPoint::new(1.0, 0.0)).unwrap();
        assert!(moment_zscores(&emp, &later).is_err());
    }

    #[test]
    fn shared_coupling_reproduces_printed_covariance() {
        let c = SimConfig {
            mu: StartPoint::new(2.0, 0.0),
            ..cfg(NoiseCoupling::SharedSingle, 200_000, 0.01)
        };
        let mut m = empirical_moments(&simulate_endpoints(&c).unwrap()).unwrap();
        m.t = Some(1.0);
        let z = moment_zscores(&m, &moments(1.0, c.mu).unwrap()).unwrap();
        // Euler bias in cov₂₂ is dt/2·... ≪ SE at this path count.
        assert!(z.max_abs() < 4.0, "{z:?} {m:?}");
    }

    #[test]
    fn curve_residual_of_frozen_path() {
        let mu = StartPoint::new(0.3, -0.4);
        let r = curve_residual(&[SpacePoint::new(0.3, -0.4)], mu, 2.0);
        assert!((r.mean - 1.0).abs() < 1e-15 && (r.max - 1.0).abs() < 1e-15);
    }

    #[test]
    fn shared_samples_hug_the_parabola() {
        let mu = StartPoint::ORIGIN;
        let c = SimConfig {
            mu,
            ..cfg(NoiseCoupling::SharedSingle, 2000, 1e-4)
        };
        let s = simulate_endpoints(&c).unwrap();
        let r = curve_residual(&s, mu, 1.0);
        // E|error| = E|1 − Σ ΔW²|/2 ≈ √(dt/π) ≈ 5.6e-3.
        assert!(r.mean < 0.01, "{r:?}");
    }

    #[test]
    fn histogram_grid_must_cover_six_sigma() {
        let mu = StartPoint::new(1.0, 0.0);
        let narrow = HistogramGrid::covering(1.0, mu, 4.0, 10, 10).unwrap();
        assert!(density_distance(&[], KernelVariant::MomentGaussian, 1.0, mu, &narrow).is_err());
        let wide = HistogramGrid::covering(1.0, mu, 6.0, 10, 10).unwrap();
        let d = density_distance(&[], KernelVariant::MomentGaussian, 1.0, mu, &wide).unwrap();
        // No samples: all empirical mass is "off grid" and all kernel mass on it.
        assert!((d.distance - 2.0).abs() < 1e-6, "{}", d.distance);
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let mut buf = Vec::new();
        write_samples_csv(&[SpacePoint::new(1.0, -0.5)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "path_id,x1,x2\n0,1.0000000000000000e0,-5.0000000000000000e-1\n");
    }
}
