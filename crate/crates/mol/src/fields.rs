//! Random diffusion-coefficient families, sensor grids, and the rejection
//! sampler that keeps every kappa strictly positive on its domain.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MolError, Result};
use crate::geometry::{torus_embed, ManifoldKind, PointCloud};

/// Minimum allowed kappa value over the positivity domain; guards the
/// conditioning of the assembled operators.
pub const KAPPA_FLOOR: f64 = 0.1;
const MAX_REJECTIONS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KappaFamily {
    Linear,
    Exponential,
    PiecewiseLinear,
    Quadratic,
    GridSamples,
}

/// Family-specific coefficients; `GridSamples` carries raw values on a
/// regular intrinsic grid (used for inversion-time e^alpha fields).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum KappaCoeffs {
    /// kappa = a x + b y + 6 + c
    Linear { a: f64, b: f64, c: f64 },
    /// kappa = a e^x + b e^y + c
    Exponential { a: f64, b: f64, c: f64 },
    /// Quadrant table with offset 10: slope in x is a1 except in the open
    /// quadrant x>0, y>0 where it is a2; slope in y is b1 for y<=0 and b2
    /// for y>0.
    PiecewiseLinear { a1: f64, b1: f64, a2: f64, b2: f64 },
    /// kappa = a1 x^2 + b1 y^2 + a2 x + b2 y + c
    Quadratic {
        a1: f64,
        b1: f64,
        a2: f64,
        b2: f64,
        c: f64,
    },
    /// Row-major values on a `rows x cols` grid over intrinsic
    /// `(theta, phi) in [0, 2 pi)^2`, interpolated bilinearly with periodic
    /// wrap-around.
    GridSamples {
        rows: usize,
        cols: usize,
        values: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaField {
    pub coeffs: KappaCoeffs,
    pub seed: u64,
}

impl KappaField {
    pub fn family(&self) -> KappaFamily {
        match self.coeffs {
            KappaCoeffs::Linear { .. } => KappaFamily::Linear,
            KappaCoeffs::Exponential { .. } => KappaFamily::Exponential,
            KappaCoeffs::PiecewiseLinear { .. } => KappaFamily::PiecewiseLinear,
            KappaCoeffs::Quadratic { .. } => KappaFamily::Quadratic,
            KappaCoeffs::GridSamples { .. } => KappaFamily::GridSamples,
        }
    }

    /// Evaluate at one ambient point. Analytic families read the ambient
    /// x, y only; grid samples recover the intrinsic angles first (the
    /// minor radius drops out of the angle recovery).
    pub fn evaluate_at(&self, point: &[f64; 3], major_radius: f64) -> f64 {
        let (x, y) = (point[0], point[1]);
        match &self.coeffs {
            KappaCoeffs::Linear { a, b, c } => a * x + b * y + 6.0 + c,
            KappaCoeffs::Exponential { a, b, c } => a * x.exp() + b * y.exp() + c,
            KappaCoeffs::PiecewiseLinear { a1, b1, a2, b2 } => {
                let slope_x = if x > 0.0 && y > 0.0 { *a2 } else { *a1 };
                let slope_y = if y > 0.0 { *b2 } else { *b1 };
                slope_x * x + slope_y * y + 10.0
            }
            KappaCoeffs::Quadratic { a1, b1, a2, b2, c } => {
                a1 * x * x + b1 * y * y + a2 * x + b2 * y + c
            }
            KappaCoeffs::GridSamples { rows, cols, values } => {
                let (theta, phi) = torus_intrinsic(point, major_radius);
                bilinear_periodic(values, *rows, *cols, theta, phi)
            }
        }
    }

    pub fn evaluate(&self, points: &[[f64; 3]], major_radius: f64) -> Vec<f64> {
        points.iter().map(|p| self.evaluate_at(p, major_radius)).collect()
    }
}

/// Recover `(theta, phi)` from an ambient torus point. The minor radius
/// drops out of both angles; only the major radius is needed.
pub fn torus_intrinsic(point: &[f64; 3], major_radius: f64) -> (f64, f64) {
    let phi = point[1].atan2(point[0]).rem_euclid(2.0 * PI);
    let ring = (point[0] * point[0] + point[1] * point[1]).sqrt();
    let theta = point[2].atan2(ring - major_radius).rem_euclid(2.0 * PI);
    (theta, phi)
}

fn bilinear_periodic(values: &[f64], rows: usize, cols: usize, theta: f64, phi: f64) -> f64 {
    let tr = theta.rem_euclid(2.0 * PI) / (2.0 * PI) * rows as f64;
    let pc = phi.rem_euclid(2.0 * PI) / (2.0 * PI) * cols as f64;
    let i0 = tr.floor() as usize % rows;
    let j0 = pc.floor() as usize % cols;
    let i1 = (i0 + 1) % rows;
    let j1 = (j0 + 1) % cols;
    let ft = tr - tr.floor();
    let fp = pc - pc.floor();
    let v = |i: usize, j: usize| values[i * cols + j];
    v(i0, j0) * (1.0 - ft) * (1.0 - fp)
        + v(i1, j0) * ft * (1.0 - fp)
        + v(i0, j1) * (1.0 - ft) * fp
        + v(i1, j1) * ft * fp
}

/// Equi-spaced sensor locations in intrinsic coordinates. The periodic
/// directions exclude the duplicate seam point; the semi-torus phi runs
/// over `[0, pi]` inclusive.
#[derive(Debug, Clone)]
pub struct SensorGrid {
    pub rows: usize,
    pub cols: usize,
    pub locations: Vec<[f64; 3]>,
    pub intrinsic: Vec<[f64; 2]>,
}

impl SensorGrid {
    pub fn new(
        kind: ManifoldKind,
        rows: usize,
        cols: usize,
        major_radius: f64,
        minor_radius: f64,
    ) -> Result<SensorGrid> {
        if rows < 2 || cols < 2 {
            return Err(MolError::Parameter("sensor grid needs rows, cols >= 2".into()));
        }
        let mut locations = Vec::with_capacity(rows * cols);
        let mut intrinsic = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            let theta = 2.0 * PI * i as f64 / rows as f64;
            for j in 0..cols {
                let phi = match kind {
                    ManifoldKind::SemiTorus => PI * j as f64 / (cols - 1) as f64,
                    _ => 2.0 * PI * j as f64 / cols as f64,
                };
                intrinsic.push([theta, phi]);
                locations.push(torus_embed(major_radius, minor_radius, theta, phi));
            }
        }
        Ok(SensorGrid {
            rows,
            cols,
            locations,
            intrinsic,
        })
    }

    /// The default 26 x 26 grid (m = 676 sensors).
    pub fn default_for(kind: ManifoldKind, major_radius: f64, minor_radius: f64) -> SensorGrid {
        SensorGrid::new(kind, 26, 26, major_radius, minor_radius).unwrap()
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }
}

/// Coefficient sampling ranges; all uniform, recorded in dataset manifests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KappaRanges {
    pub linear_slope: (f64, f64),
    pub linear_offset: (f64, f64),
    pub exponential_scale: (f64, f64),
    pub exponential_offset: (f64, f64),
    pub piecewise_slope: (f64, f64),
    pub quadratic_curvature: (f64, f64),
    pub quadratic_slope: (f64, f64),
    pub quadratic_offset: (f64, f64),
}

impl Default for KappaRanges {
    fn default() -> Self {
        KappaRanges {
            linear_slope: (-1.0, 1.0),
            linear_offset: (-1.0, 1.0),
            exponential_scale: (0.0, 0.15),
            exponential_offset: (1.0, 3.0),
            piecewise_slope: (-1.0, 1.0),
            quadratic_curvature: (-0.3, 0.3),
            quadratic_slope: (-1.0, 1.0),
            quadratic_offset: (8.0, 12.0),
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    range.0 + (range.1 - range.0) * rng.random::<f64>()
}

/// Draw coefficients until `min kappa > KAPPA_FLOOR` over the positivity
/// domain (cloud points plus sensor locations).
pub fn sample_kappa(
    family: KappaFamily,
    seed: u64,
    cloud: &PointCloud,
    sensors: &SensorGrid,
) -> Result<KappaField> {
    sample_kappa_with(family, seed, cloud, sensors, &KappaRanges::default())
}

pub fn sample_kappa_with(
    family: KappaFamily,
    seed: u64,
    cloud: &PointCloud,
    sensors: &SensorGrid,
    ranges: &KappaRanges,
) -> Result<KappaField> {
    if family == KappaFamily::GridSamples {
        return Err(MolError::Parameter(
            "GridSamples fields are constructed from data, not sampled".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_REJECTIONS {
        let coeffs = match family {
            KappaFamily::Linear => KappaCoeffs::Linear {
                a: uniform(&mut rng, ranges.linear_slope),
                b: uniform(&mut rng, ranges.linear_slope),
                c: uniform(&mut rng, ranges.linear_offset),
            },
            KappaFamily::Exponential => KappaCoeffs::Exponential {
                a: uniform(&mut rng, ranges.exponential_scale),
                b: uniform(&mut rng, ranges.exponential_scale),
                c: uniform(&mut rng, ranges.exponential_offset),
            },
            KappaFamily::PiecewiseLinear => KappaCoeffs::PiecewiseLinear {
                a1: uniform(&mut rng, ranges.piecewise_slope),
                b1: uniform(&mut rng, ranges.piecewise_slope),
                a2: uniform(&mut rng, ranges.piecewise_slope),
                b2: uniform(&mut rng, ranges.piecewise_slope),
            },
            KappaFamily::Quadratic => KappaCoeffs::Quadratic {
                a1: uniform(&mut rng, ranges.quadratic_curvature),
                b1: uniform(&mut rng, ranges.quadratic_curvature),
                a2: uniform(&mut rng, ranges.quadratic_slope),
                b2: uniform(&mut rng, ranges.quadratic_slope),
                c: uniform(&mut rng, ranges.quadratic_offset),
            },
            KappaFamily::GridSamples => unreachable!(),
        };
        let field = KappaField { coeffs, seed };
        let min_on = |pts: &[[f64; 3]]| {
            pts.iter()
                .map(|p| field.evaluate_at(p, cloud.major_radius))
                .fold(f64::INFINITY, f64::min)
        };
        if min_on(&cloud.points) > KAPPA_FLOOR && min_on(&sensors.locations) > KAPPA_FLOOR {
            return Ok(field);
        }
    }
    Err(MolError::Parameter(format!(
        "kappa rejection sampling failed {MAX_REJECTIONS} times for {family:?}; \
         coefficient ranges cannot satisfy the positivity floor"
    )))
}
