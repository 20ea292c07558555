use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Density floor relative to the peak of the unfloored density.
pub const FLOOR_RATIO: f64 = 1e-12;

/// Kernels contribute nothing beyond this many bandwidths.
const KERNEL_CUTOFF: f64 = 8.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityKind {
    #[default]
    Kde,
    Gaussian,
}

/// A univariate density that is floored at a positive value so ratios stay finite.
#[derive(Clone, Debug, PartialEq)]
pub enum DensityModel {
    /// Gaussian-kernel estimate over distinct sorted sample values with multiplicities.
    Kde {
        points: Vec<f64>,
        counts: Vec<f64>,
        bandwidth: f64,
        floor: f64,
    },
    Gaussian {
        mean: f64,
        sd: f64,
        floor: f64,
    },
    /// `base` moved from mean/sd `from` to mean/sd `to`.
    LocationScale {
        base: Box<DensityModel>,
        from: (f64, f64),
        to: (f64, f64),
    },
}

fn normal_pdf(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * PI).sqrt()
}

/// Distinct values of `xs` in ascending order, their multiplicities, and the
/// position of each input in the distinct list.
pub(crate) fn distinct_sorted(xs: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let (mut points, mut counts) = (Vec::new(), Vec::new());
    let mut inverse = vec![0; xs.len()];
    for k in order {
        if points.last() != Some(&xs[k]) {
            points.push(xs[k]);
            counts.push(0.0);
        }
        *counts.last_mut().unwrap() += 1.0;
        inverse[k] = points.len() - 1;
    }
    (points, counts, inverse)
}

/// Sample mean and standard deviation (`n − 1` denominator).
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// `1.06 σ̂ n^{-1/5}`.
pub fn silverman_bandwidth(sd: f64, n: usize) -> f64 {
    1.06 * sd * (n as f64).powf(-0.2)
}

impl DensityModel {
    pub fn gaussian(mean: f64, sd: f64) -> Result<Self> {
        if !(sd > 0.0) || !mean.is_finite() || !sd.is_finite() {
            return Err(Error::DegenerateDensity(format!("gaussian with mean {mean} and sd {sd}")));
        }
        Ok(DensityModel::Gaussian {
            mean,
            sd,
            floor: FLOOR_RATIO * normal_pdf(0.0) / sd,
        })
    }

    pub fn kde(samples: &[f64]) -> Result<Self> {
        Self::kde_with_values(samples).map(|(kde, _)| kde)
    }

    /// KDE over `samples` together with its unfloored values at those
    /// samples, in input order. The floor uses the largest of these values as
    /// the peak.
    pub fn kde_with_values(samples: &[f64]) -> Result<(Self, Vec<f64>)> {
        if samples.len() < 2 {
            return Err(Error::DegenerateDensity(format!("{} samples", samples.len())));
        }
        if let Some(x) = samples.iter().find(|x| !x.is_finite()) {
            return Err(Error::DegenerateDensity(format!("non-finite sample {x}")));
        }
        let (_, sd) = mean_sd(samples);
        if !(sd > 0.0) {
            return Err(Error::DegenerateDensity("samples have zero variance".into()));
        }
        let (points, counts, inverse) = distinct_sorted(samples);
        let mut kde = DensityModel::Kde {
            points,
            counts,
            bandwidth: silverman_bandwidth(sd, samples.len()),
            floor: 0.0,
        };
        let at_points: Vec<f64> = match &kde {
            DensityModel::Kde { points, .. } => points.iter().map(|&x| kde.raw(x)).collect(),
            _ => unreachable!(),
        };
        let peak = at_points.iter().copied().fold(0.0, f64::max);
        if let DensityModel::Kde { floor, .. } = &mut kde {
            *floor = FLOOR_RATIO * peak;
        }
        Ok((kde, inverse.iter().map(|&k| at_points[k]).collect()))
    }

    /// Moves this density from mean/sd `from` to mean/sd `to` by the
    /// standardize-then-rescale map, including the Jacobian factor.
    pub fn location_scale(self, from: (f64, f64), to: (f64, f64)) -> Result<Self> {
        if !(from.1 > 0.0) || !(to.1 > 0.0) {
            return Err(Error::DegenerateDensity(format!("location-scale with sds {} and {}", from.1, to.1)));
        }
        Ok(DensityModel::LocationScale {
            base: Box::new(self),
            from,
            to,
        })
    }

    /// Unfloored density.
    pub fn raw(&self, z: f64) -> f64 {
        match self {
            DensityModel::Kde {
                points,
                counts,
                bandwidth,
                ..
            } => {
                let h = *bandwidth;
                let lo = points.partition_point(|&x| x < z - KERNEL_CUTOFF * h);
                let hi = points.partition_point(|&x| x <= z + KERNEL_CUTOFF * h);
                let inv_h = 1.0 / h;
                let sum: f64 = points[lo..hi]
                    .iter()
                    .zip(&counts[lo..hi])
                    .map(|(&x, &c)| {
                        let u = (z - x) * inv_h;
                        c * (-0.5 * u * u).exp()
                    })
                    .sum();
                let n: f64 = counts.iter().sum();
                sum / (n * h * (2.0 * PI).sqrt())
            }
            DensityModel::Gaussian { mean, sd, .. } => normal_pdf((z - mean) / sd) / sd,
            DensityModel::LocationScale { base, from, to } => {
                let scale = from.1 / to.1;
                scale * base.raw(from.0 + from.1 * (z - to.0) / to.1)
            }
        }
    }

    pub fn floor(&self) -> f64 {
        match self {
            DensityModel::Kde { floor, .. } | DensityModel::Gaussian { floor, .. } => *floor,
            DensityModel::LocationScale { base, from, to } => base.floor() * from.1 / to.1,
        }
    }

    /// Density floored at [`DensityModel::floor`].
    pub fn eval(&self, z: f64) -> f64 {
        self.raw(z).max(self.floor())
    }
}

/// Source-density estimate for observed exposures.
pub fn estimate_source_density(samples: &[f64], kind: DensityKind) -> Result<DensityModel> {
    match kind {
        DensityKind::Kde => DensityModel::kde(samples),
        DensityKind::Gaussian => {
            if samples.len() < 2 {
                return Err(Error::DegenerateDensity(format!("{} samples", samples.len())));
            }
            let (mean, sd) = mean_sd(samples);
            DensityModel::gaussian(mean, sd)
        }
    }
}

/// Target density with the shape of `source` and the given target moments.
pub fn target_density(source: &DensityModel, source_moments: (f64, f64), target_moments: (f64, f64)) -> Result<DensityModel> {
    source.clone().location_scale(source_moments, target_moments)
}
