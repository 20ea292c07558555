//! Importance-sampling estimates of per-arm effects from a design experiment.
//!
//! Each measurement arm's producers are observed under the design, whose
//! total-exposure distribution differs from the one they would see under the
//! arm's global treatment. The target distribution is approximated by moving
//! the observed (source) density to the target moments estimated from the
//! children that did receive the arm's experience, and responses are reweighted
//! by the density ratio.

mod density;
mod exposure;
pub mod io;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

pub use density::{
    estimate_source_density, mean_sd, silverman_bandwidth, target_density, DensityKind, DensityModel, FLOOR_RATIO,
};
pub use exposure::{collect_exposures, estimate_target_moments, selection_rates, ArmExposure, ExposureSample, TargetMoments};

use crate::design::Partition;
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use density::distinct_sorted;
use exposure::{moments_over, ProducerStats};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorMode {
    Plain,
    #[default]
    SelfNormalized,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub bootstrap: usize,
    pub alpha: f64,
    /// Largest allowed weight; `None` disables clipping.
    pub clip: Option<f64>,
    pub mode: EstimatorMode,
    pub density: DensityKind,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            bootstrap: 1000,
            alpha: 0.05,
            clip: Some(50.0),
            mode: EstimatorMode::SelfNormalized,
            density: DensityKind::Kde,
        }
    }
}

impl EstimatorConfig {
    pub fn check(&self) -> Result<()> {
        if self.bootstrap < 100 {
            return Err(Error::Parameter(format!("bootstrap needs at least 100 replicates, got {}", self.bootstrap)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Parameter(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if let Some(c) = self.clip {
            if !(c > 0.0) {
                return Err(Error::Parameter(format!("weight clip must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// `Φ⁻¹(p)` for the standard normal.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Weights {
    pub values: Vec<f64>,
    /// How many weights hit the clip.
    pub clipped: usize,
}

impl Weights {
    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn ess(&self) -> f64 {
        effective_sample_size(&self.values)
    }
}

/// `(Σw)² / Σw²`.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let s: f64 = weights.iter().sum();
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    if s2 > 0.0 {
        s * s / s2
    } else {
        0.0
    }
}

/// Density-ratio weights `target(z)/source(z)` at each observed exposure.
pub fn importance_weights(z: &[f64], target: &DensityModel, source: &DensityModel, clip: Option<f64>) -> Weights {
    ratio_weights(z.iter().map(|&z| (target.eval(z), source.eval(z))), clip)
}

fn ratio_weights(densities: impl Iterator<Item = (f64, f64)>, clip: Option<f64>) -> Weights {
    let mut clipped = 0;
    let values = densities
        .map(|(t, s)| {
            let w = t / s;
            match clip {
                Some(c) if w > c => {
                    clipped += 1;
                    c
                }
                _ => w,
            }
        })
        .collect();
    Weights { values, clipped }
}

/// Weighted mean response of one arm.
pub fn estimate_arm(responses: &[f64], weights: &[f64], mode: EstimatorMode) -> Result<f64> {
    if responses.len() != weights.len() {
        return Err(Error::Input(format!(
            "estimator: {} responses but {} weights",
            responses.len(),
            weights.len()
        )));
    }
    if responses.len() < 2 {
        return Err(Error::Estimation(format!("arm has {} producers, need at least 2", responses.len())));
    }
    let weighted: f64 = responses.iter().zip(weights).map(|(y, w)| y * w).sum();
    match mode {
        EstimatorMode::Plain => Ok(weighted / responses.len() as f64),
        EstimatorMode::SelfNormalized => {
            let total: f64 = weights.iter().sum();
            if !(total > 0.0) {
                return Err(Error::Estimation("weights sum to zero".into()));
            }
            Ok(weighted / total)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Effects {
    pub tau: Vec<f64>,
    /// `tau[r] − tau[0]` for `r ≥ 1`.
    pub diffs: Vec<f64>,
}

pub fn estimate_effects(responses: &[Vec<f64>], weights: &[Vec<f64>], mode: EstimatorMode) -> Result<Effects> {
    let tau = responses
        .iter()
        .zip(weights)
        .map(|(y, w)| estimate_arm(y, w, mode))
        .collect::<Result<Vec<_>>>()?;
    Ok(Effects {
        diffs: tau.iter().skip(1).map(|t| t - tau[0]).collect(),
        tau,
    })
}

/// One arm's weighting and estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct ArmFit {
    pub tau: f64,
    pub weights: Weights,
    pub source_moments: (f64, f64),
    pub target_moments: TargetMoments,
    /// Source density could not be estimated; weights are all 1.
    pub degenerate_density: bool,
    /// Target variance was non-positive and the source variance was used.
    pub variance_fallback: bool,
}

struct ArmData<'a> {
    exposure: &'a ArmExposure,
    stats: Vec<ProducerStats>,
    responses: Vec<f64>,
}

impl<'a> ArmData<'a> {
    fn new(exposure: &'a ArmExposure, responses: &[f64]) -> Result<Self> {
        let ys = exposure
            .producers
            .iter()
            .map(|i| {
                responses
                    .get(i.index())
                    .copied()
                    .filter(|y| y.is_finite())
                    .ok_or_else(|| Error::Input(format!("estimator: no response for producer {i}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            exposure,
            stats: exposure.stats(),
            responses: ys,
        })
    }

    /// Fits the arm on the producers at positions `picks` (with repeats).
    fn fit(&self, picks: &[usize], arm: usize, config: &EstimatorConfig) -> Result<ArmFit> {
        let z: Vec<f64> = picks.iter().map(|&k| self.exposure.z_star[k]).collect();
        let y: Vec<f64> = picks.iter().map(|&k| self.responses[k]).collect();
        let source_moments = mean_sd(&z);
        let target_moments = moments_over(&self.stats, picks.iter().copied(), arm)?;
        let source = match config.density {
            DensityKind::Kde => DensityModel::kde_with_values(&z),
            DensityKind::Gaussian => estimate_source_density(&z, config.density).map(|d| {
                let values = z.iter().map(|&x| d.raw(x)).collect();
                (d, values)
            }),
        };
        let (weights, degenerate_density, variance_fallback) = match source {
            Ok((source, values)) => {
                let floor = source.floor();
                let source_values: Vec<f64> = values.into_iter().map(|v| v.max(floor)).collect();
                let fallback = !(target_moments.variance > 0.0);
                let target_sd = if fallback { source_moments.1 } else { target_moments.variance.sqrt() };
                let target = target_density(&source, source_moments, (target_moments.mean, target_sd))?;
                // bootstrap picks repeat, so evaluate the target once per distinct value
                let (distinct, _, inverse) = distinct_sorted(&z);
                let at_distinct: Vec<f64> = distinct.iter().map(|&x| target.eval(x)).collect();
                let densities = inverse.iter().map(|&k| at_distinct[k]).zip(source_values);
                (ratio_weights(densities, config.clip), false, fallback)
            }
            Err(Error::DegenerateDensity(_)) => (
                Weights {
                    values: vec![1.0; z.len()],
                    clipped: 0,
                },
                true,
                false,
            ),
            Err(e) => return Err(e),
        };
        Ok(ArmFit {
            tau: estimate_arm(&y, &weights.values, config.mode)?,
            weights,
            source_moments,
            target_moments,
            degenerate_density,
            variance_fallback,
        })
    }
}

/// Fits every arm on the full sample.
pub fn fit_arms(sample: &ExposureSample, responses: &[f64], config: &EstimatorConfig) -> Result<Vec<ArmFit>> {
    sample
        .arms
        .iter()
        .enumerate()
        .map(|(r, exposure)| {
            let data = ArmData::new(exposure, responses)?;
            let all: Vec<usize> = (0..exposure.len()).collect();
            let fit = data.fit(&all, r, config)?;
            if fit.degenerate_density {
                log::warn!("estimator: arm {r}: degenerate source density, using unit weights");
            }
            if fit.variance_fallback {
                log::warn!("estimator: arm {r}: non-positive target variance, using the source variance");
            }
            Ok(fit)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub r: usize,
    pub n: usize,
    pub tau_hat: f64,
    pub sigma_hat: f64,
    pub ci: [f64; 2],
    pub max_weight: f64,
    pub ess: f64,
    pub clipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectReport {
    pub r: usize,
    pub diff: f64,
    pub sigma_hat: f64,
    pub ci: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Largest weight over all arms.
    pub max_weight: f64,
    /// Smallest effective sample size over all arms.
    pub ess: f64,
    pub clipped: usize,
    pub dropped_replicates: usize,
    pub degenerate_density: bool,
    pub variance_fallback: bool,
}

/// Shadow populations compared by unweighted means; a difference signals a
/// network effect.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShadowReport {
    pub diff: f64,
    pub sigma_hat: f64,
    pub ci: [f64; 2],
    pub by_arm: Vec<EffectReport>,
    pub dropped_replicates: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub arms: Vec<ArmReport>,
    pub effects: Vec<EffectReport>,
    pub diagnostics: Diagnostics,
    pub shadow: Option<ShadowReport>,
    pub bootstrap: usize,
    pub alpha: f64,
}

fn sd(xs: &[f64]) -> f64 {
    mean_sd(xs).1
}

fn interval(point: f64, sigma: f64, z: f64) -> [f64; 2] {
    [point - z * sigma, point + z * sigma]
}

/// Unweighted per-arm means of `responses` over the picked members.
fn shadow_means(members: &[Vec<f64>], picks: &[Vec<usize>]) -> Option<Vec<f64>> {
    members
        .iter()
        .zip(picks)
        .map(|(ys, ks)| (!ks.is_empty()).then(|| ks.iter().map(|&k| ys[k]).sum::<f64>() / ks.len() as f64))
        .collect()
}

/// Draws `total` members with replacement from the pooled arms and splits
/// the draws back by arm.
fn resample(rng: &mut rng::Rng, sizes: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = sizes.iter().sum();
    let mut picks = vec![Vec::new(); sizes.len()];
    for _ in 0..total {
        let mut k = rng.random_range(0..total);
        let mut r = 0;
        while k >= sizes[r] {
            k -= sizes[r];
            r += 1;
        }
        picks[r].push(k);
    }
    picks
}

struct Replicate {
    tau: Option<Vec<f64>>,
    shadow: Option<Vec<f64>>,
}

/// Point estimates with bootstrap intervals.
///
/// Each replicate resamples the measurement producers (and separately the
/// shadow populations) with replacement, then repeats density estimation,
/// weighting and estimation. Replicates that leave an arm with fewer than two
/// producers, or that fail to estimate, are dropped and counted.
pub fn bootstrap_ci(
    partition: &Partition,
    sample: &ExposureSample,
    responses: &[f64],
    config: &EstimatorConfig,
    seed: u64,
) -> Result<EstimateReport> {
    config.check()?;
    let m = sample.n_arms();
    if m == 0 {
        return Err(Error::Input("estimator: no arms".into()));
    }
    let data = sample
        .arms
        .iter()
        .map(|a| ArmData::new(a, responses))
        .collect::<Result<Vec<_>>>()?;
    let fits = fit_arms(sample, responses, config)?;
    let tau: Vec<f64> = fits.iter().map(|f| f.tau).collect();

    let shadow_members: Vec<Vec<f64>> = partition
        .lambda
        .iter()
        .map(|set| set.iter().map(|i| responses.get(i.index()).copied().unwrap_or(f64::NAN)).collect())
        .collect();
    let with_shadow = m > 1 && shadow_members.len() == m && shadow_members.iter().all(|s| !s.is_empty());
    if with_shadow {
        if let Some(i) = partition.lambda.iter().flatten().find(|i| !responses.get(i.index()).is_some_and(|y| y.is_finite())) {
            return Err(Error::Input(format!("estimator: no response for shadow node {i}")));
        }
    }

    let sizes: Vec<usize> = sample.arms.iter().map(ArmExposure::len).collect();
    let shadow_sizes: Vec<usize> = shadow_members.iter().map(Vec::len).collect();
    let replicates: Vec<Replicate> = (0..config.bootstrap)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::stream(seed, Purpose::Bootstrap, t as u64);
            let picks = resample(&mut rng, &sizes);
            let tau = if picks.iter().any(|p| p.len() < 2) {
                None
            } else {
                data.iter()
                    .enumerate()
                    .map(|(r, d)| d.fit(&picks[r], r, config).map(|f| f.tau))
                    .collect::<Result<Vec<_>>>()
                    .ok()
            };
            let shadow = if with_shadow {
                shadow_means(&shadow_members, &resample(&mut rng, &shadow_sizes))
            } else {
                None
            };
            Replicate { tau, shadow }
        })
        .collect();

    let kept: Vec<&Vec<f64>> = replicates.iter().filter_map(|r| r.tau.as_ref()).collect();
    if kept.len() < 2 {
        return Err(Error::Estimation(format!(
            "only {} of {} bootstrap replicates usable",
            kept.len(),
            config.bootstrap
        )));
    }
    let z = normal_quantile(1.0 - config.alpha / 2.0);

    let arms: Vec<ArmReport> = fits
        .iter()
        .enumerate()
        .map(|(r, fit)| {
            let sigma = sd(&kept.iter().map(|t| t[r]).collect::<Vec<_>>());
            ArmReport {
                r,
                n: sizes[r],
                tau_hat: fit.tau,
                sigma_hat: sigma,
                ci: interval(fit.tau, sigma, z),
                max_weight: fit.weights.max(),
                ess: fit.weights.ess(),
                clipped: fit.weights.clipped,
            }
        })
        .collect();
    let effects: Vec<EffectReport> = (1..m)
        .map(|r| {
            let diff = tau[r] - tau[0];
            let sigma = sd(&kept.iter().map(|t| t[r] - t[0]).collect::<Vec<_>>());
            EffectReport {
                r,
                diff,
                sigma_hat: sigma,
                ci: interval(diff, sigma, z),
            }
        })
        .collect();

    let shadow = if with_shadow {
        let point: Vec<f64> = shadow_members.iter().map(|ys| ys.iter().sum::<f64>() / ys.len() as f64).collect();
        let reps: Vec<&Vec<f64>> = replicates.iter().filter_map(|r| r.shadow.as_ref()).collect();
        let by_arm: Vec<EffectReport> = (1..m)
            .map(|r| {
                let diff = point[r] - point[0];
                let sigma = sd(&reps.iter().map(|s| s[r] - s[0]).collect::<Vec<_>>());
                EffectReport {
                    r,
                    diff,
                    sigma_hat: sigma,
                    ci: interval(diff, sigma, z),
                }
            })
            .collect();
        Some(ShadowReport {
            diff: by_arm[0].diff,
            sigma_hat: by_arm[0].sigma_hat,
            ci: by_arm[0].ci,
            dropped_replicates: config.bootstrap - reps.len(),
            by_arm,
        })
    } else {
        None
    };

    let dropped = config.bootstrap - kept.len();
    if dropped > 0 {
        log::warn!("estimator: dropped {dropped} of {} bootstrap replicates", config.bootstrap);
    }
    Ok(EstimateReport {
        diagnostics: Diagnostics {
            max_weight: arms.iter().map(|a| a.max_weight).fold(0.0, f64::max),
            ess: arms.iter().map(|a| a.ess).fold(f64::INFINITY, f64::min),
            clipped: arms.iter().map(|a| a.clipped).sum(),
            dropped_replicates: dropped,
            degenerate_density: fits.iter().any(|f| f.degenerate_density),
            variance_fallback: fits.iter().any(|f| f.variance_fallback),
        },
        arms,
        effects,
        shadow,
        bootstrap: config.bootstrap,
        alpha: config.alpha,
    })
}
