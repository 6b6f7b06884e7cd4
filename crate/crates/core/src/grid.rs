//! Cell-centred rectangular grids on `[−L1, L1] × [−L2, L2]` and the
//! nonnegative fields that live on them.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, require_positive, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid2D {
    pub l1: f64,
    pub l2: f64,
    pub n1: usize,
    pub n2: usize,
}

impl Grid2D {
    pub const MIN_NODES: usize = 8;

    pub fn new(l1: f64, l2: f64, n1: usize, n2: usize) -> Result<Self> {
        let g = Self { l1, l2, n1, n2 };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        require_positive("l1", self.l1)?;
        require_positive("l2", self.l2)?;
        if self.n1 < Self::MIN_NODES || self.n2 < Self::MIN_NODES {
            return Err(invalid(
                "grid",
                format!("needs at least {} nodes per axis, got {}×{}", Self::MIN_NODES, self.n1, self.n2),
            ));
        }
        Ok(())
    }

    pub fn h1(&self) -> f64 {
        2.0 * self.l1 / self.n1 as f64
    }

    pub fn h2(&self) -> f64 {
        2.0 * self.l2 / self.n2 as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.h1() * self.h2()
    }

    pub fn x1(&self, i: usize) -> f64 {
        -self.l1 + (i as f64 + 0.5) * self.h1()
    }

    pub fn x2(&self, j: usize) -> f64 {
        -self.l2 + (j as f64 + 0.5) * self.h2()
    }

    pub fn len(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.n2 + j
    }

    /// Largest `x₁²` over cell centres.
    pub fn max_x1_sq(&self) -> f64 {
        let edge = self.x1(0).abs();
        edge * edge
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    /// `u₀ ≡ level`.
    Constant { level: f64 },
    /// `c1` on the open unit disk, 0 elsewhere.
    Ball { c1: f64 },
    /// `a·exp(−k(x₁² + x₂²))`.
    Gaussian { a: f64, k: f64 },
}

impl InitialData {
    pub fn validate(&self) -> Result<()> {
        let ok = |name: &'static str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(invalid(name, format!("amplitude must be finite and ≥ 0, got {v}")))
            }
        };
        match *self {
            InitialData::Constant { level } => ok("level", level),
            InitialData::Ball { c1 } => ok("c1", c1),
            InitialData::Gaussian { a, k } => {
                ok("a", a)?;
                require_positive("k", k)
            }
        }
    }

    pub fn value(&self, x1: f64, x2: f64) -> f64 {
        match *self {
            InitialData::Constant { level } => level,
            InitialData::Ball { c1 } => {
                if x1 * x1 + x2 * x2 < 1.0 {
                    c1
                } else {
                    0.0
                }
            }
            InitialData::Gaussian { a, k } => a * (-k * (x1 * x1 + x2 * x2)).exp(),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, InitialData::Constant { .. })
    }
}

impl fmt::Display for InitialData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            InitialData::Constant { level } => write!(f, "ConstantLevel({level})"),
            InitialData::Ball { c1 } => write!(f, "BallIndicator({c1})"),
            InitialData::Gaussian { a, k } => write!(f, "GaussianBump({a},{k})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub grid: Grid2D,
    /// Row-major in `x₁`: value at `(i, j)` is `values[i * n2 + j]`.
    pub values: Vec<f64>,
    pub t: f64,
}

impl Field {
    pub fn zeros(grid: Grid2D, t: f64) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
            t,
        }
    }

    pub fn from_fn(grid: Grid2D, t: f64, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for i in 0..grid.n1 {
            let x1 = grid.x1(i);
            for j in 0..grid.n2 {
                values.push(f(x1, grid.x2(j)));
            }
        }
        Self { grid, values, t }
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
    }

    pub fn inf(&self) -> f64 {
        self.values.iter().fold(f64::INFINITY, |m, &v| m.min(v))
    }

    /// `Σ u · h1 · h2`, summed in index order.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_area()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|&v| v >= 0.0)
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Largest absolute value on the outermost ring of cells.
    pub fn boundary_sup(&self) -> f64 {
        let g = self.grid;
        let mut m: f64 = 0.0;
        for i in 0..g.n1 {
            m = m.max(self.at(i, 0).abs()).max(self.at(i, g.n2 - 1).abs());
        }
        for j in 0..g.n2 {
            m = m.max(self.at(0, j).abs()).max(self.at(g.n1 - 1, j).abs());
        }
        m
    }

    /// Root-mean-square spread `(√⟨x₁²⟩, √⟨x₂²⟩)` weighted by the field.
    pub fn spread(&self) -> [f64; 2] {
        let g = self.grid;
        let (mut w, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for i in 0..g.n1 {
            let x1 = g.x1(i);
            for j in 0..g.n2 {
                let v = self.at(i, j);
                let x2 = g.x2(j);
                w += v;
                s1 += v * x1 * x1;
                s2 += v * x2 * x2;
            }
        }
        if w > 0.0 {
            [(s1 / w).sqrt(), (s2 / w).sqrt()]
        } else {
            [0.0, 0.0]
        }
    }

    /// `i,j,x1,x2,value` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "i,j,x1,x2,value")?;
        let g = self.grid;
        for i in 0..g.n1 {
            for j in 0..g.n2 {
                writeln!(out, "{i},{j},{:.16e},{:.16e},{:.16e}", g.x1(i), g.x2(j), self.at(i, j))?;
            }
        }
        Ok(())
    }
}

pub fn make_initial(kind: &InitialData, grid: Grid2D) -> Result<Field> {
    grid.validate()?;
    kind.validate()?;
    Ok(Field::from_fn(grid, 0.0, |a, b| kind.value(a, b)))
}
