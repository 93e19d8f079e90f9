//! Observation channels and batch sampling.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::Domain;
use crate::error::{PoscmError, Result};
use crate::exogenous::sample_exogenous;
use crate::generate::{generate_unchecked, World};
use crate::interventions::Regime;
use crate::rng::{derive_seed, tag, KeyedStream};
use crate::spec::PoscmSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelNoise {
    Identity,
    /// Continuous quantities only.
    AdditiveGaussian { sigma: f64 },
    /// With probability `rate` replace a label (or edge bit) by a uniformly
    /// chosen different one.
    Flip { rate: f64 },
}

/// Which of `A`, `beta`, `V` are observed, and through which channel.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeasurementModel {
    pub adjacency: Option<ChannelNoise>,
    pub beta: Option<ChannelNoise>,
    pub value: Option<ChannelNoise>,
}

impl MeasurementModel {
    pub fn values_only() -> Self {
        Self { value: Some(ChannelNoise::Identity), ..Self::default() }
    }

    pub fn values_and_contexts() -> Self {
        Self { beta: Some(ChannelNoise::Identity), value: Some(ChannelNoise::Identity), adjacency: None }
    }

    pub fn everything() -> Self {
        Self {
            adjacency: Some(ChannelNoise::Identity),
            beta: Some(ChannelNoise::Identity),
            value: Some(ChannelNoise::Identity),
        }
    }

    pub fn validate(&self, spec: &PoscmSpec) -> Result<()> {
        let check = |noise: &ChannelNoise, domains: &[Domain], what: &str| -> Result<()> {
            match noise {
                ChannelNoise::Identity => Ok(()),
                ChannelNoise::AdditiveGaussian { sigma } => {
                    if !(*sigma >= 0.0 && sigma.is_finite()) {
                        return Err(PoscmError::InvalidParameter(format!("noise sigma {sigma}")));
                    }
                    if domains.iter().any(Domain::is_finite) {
                        return Err(PoscmError::InvalidParameter(format!(
                            "additive Gaussian noise on the finite {what} channel"
                        )));
                    }
                    Ok(())
                }
                ChannelNoise::Flip { rate } => {
                    if !(0.0..=1.0).contains(rate) {
                        return Err(PoscmError::InvalidParameter(format!("flip rate {rate}")));
                    }
                    if domains.iter().any(|d| !d.is_finite()) {
                        return Err(PoscmError::InvalidParameter(format!("label flips on the continuous {what} channel")));
                    }
                    Ok(())
                }
            }
        };
        if let Some(ChannelNoise::AdditiveGaussian { .. }) = self.adjacency {
            return Err(PoscmError::InvalidParameter("additive Gaussian noise on adjacency".into()));
        }
        if let Some(ChannelNoise::Flip { rate }) = self.adjacency {
            if !(0.0..=1.0).contains(&rate) {
                return Err(PoscmError::InvalidParameter(format!("flip rate {rate}")));
            }
        }
        if let Some(c) = &self.beta {
            check(c, &spec.context_domain, "context")?;
        }
        if let Some(c) = &self.value {
            check(c, &spec.value_domain, "value")?;
        }
        Ok(())
    }
}

/// Observed channels of one world; excluded channels are `None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Observation {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adjacency: Option<Vec<bool>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<Vec<f64>>,
}

fn apply(noise: ChannelNoise, x: &[f64], domains: &[Domain], stream: &mut KeyedStream) -> Vec<f64> {
    match noise {
        ChannelNoise::Identity => x.to_vec(),
        ChannelNoise::AdditiveGaussian { sigma } => {
            x.iter().map(|v| v + sigma * stream.standard_normal()).collect()
        }
        ChannelNoise::Flip { rate } => x
            .iter()
            .zip(domains)
            .map(|(v, d)| {
                let k = d.cardinality().unwrap_or(1);
                let (flip, pick) = (stream.uniform(), stream.uniform());
                if flip < rate && k > 1 {
                    let other = ((pick * (k - 1) as f64) as usize).min(k - 2);
                    (if other >= *v as usize { other + 1 } else { other }) as f64
                } else {
                    *v
                }
            })
            .collect(),
    }
}

/// Applies the measurement channels with noise keyed by `(obs_seed, world.id)`.
pub fn observe(world: &World, spec: &PoscmSpec, om: &MeasurementModel, obs_seed: u64) -> Observation {
    let stream = |c: u64| KeyedStream::new(obs_seed, tag::OBSERVE, world.id, c, 0);
    let adjacency = om.adjacency.map(|noise| {
        let bits = world.adjacency.as_slice();
        match noise {
            ChannelNoise::Flip { rate } => {
                let mut s = stream(0);
                let n = spec.n();
                bits.iter()
                    .enumerate()
                    .map(|(k, b)| {
                        let u = s.uniform();
                        if spec.is_potential_edge(k / n, k % n) && u < rate {
                            !b
                        } else {
                            *b
                        }
                    })
                    .collect()
            }
            _ => bits.to_vec(),
        }
    });
    Observation {
        adjacency,
        beta: om.beta.map(|c| apply(c, &world.beta, &spec.context_domain, &mut stream(1))),
        value: om.value.map(|c| apply(c, &world.value, &spec.value_domain, &mut stream(2))),
    }
}

/// `count` i.i.d. worlds under `regime` with their observations, in replicate order.
pub fn sample_worlds(
    spec: &PoscmSpec,
    regime: &Regime,
    om: &MeasurementModel,
    seed: u64,
    count: usize,
) -> Result<Vec<(World, Observation)>> {
    sample_map(spec, regime, om, seed, count, |w, o| (w, o))
}

pub fn sample_observations(
    spec: &PoscmSpec,
    regime: &Regime,
    om: &MeasurementModel,
    seed: u64,
    count: usize,
) -> Result<Vec<Observation>> {
    sample_map(spec, regime, om, seed, count, |_, o| o)
}

/// Observed values of `node` over `count` worlds, with identity value readout.
pub fn sample_values(spec: &PoscmSpec, regime: &Regime, node: usize, seed: u64, count: usize) -> Result<Vec<f64>> {
    spec.check_node(node)?;
    sample_map(spec, regime, &MeasurementModel::default(), seed, count, |w, _| w.value[node])
}

fn sample_map<T: Send>(
    spec: &PoscmSpec,
    regime: &Regime,
    om: &MeasurementModel,
    seed: u64,
    count: usize,
    f: impl Fn(World, Observation) -> T + Sync,
) -> Result<Vec<T>> {
    if count == 0 {
        return Err(PoscmError::InvalidParameter("count must be at least 1".into()));
    }
    regime.validate(spec)?;
    om.validate(spec)?;
    let regime = Arc::new(regime.clone());
    let obs_seed = derive_seed(seed, tag::OBSERVE);
    (0..count as u64)
        .into_par_iter()
        .map(|r| {
            let draw = Arc::new(sample_exogenous(spec, seed, r));
            let world = generate_unchecked(spec, &draw, &regime)?;
            let obs = observe(&world, spec, om, obs_seed);
            Ok(f(world, obs))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::MechanismOperator;

    fn gaussian() -> PoscmSpec {
        PoscmSpec::builder(1)
            .value_domain(0, Domain::interval(-50.0, 50.0).unwrap())
            .mechanism(0, MechanismOperator::fixed_direct(|_, u| crate::rng::normal_quantile(u[0])))
            .build()
            .unwrap()
    }

    #[test]
    fn identity_value_channel_hides_the_rest() {
        let s = gaussian();
        let out = sample_worlds(&s, &Regime::observational(), &MeasurementModel::values_only(), 1, 5).unwrap();
        for (w, o) in &out {
            assert_eq!(o.value.as_ref().unwrap(), &w.value);
            assert!(o.adjacency.is_none() && o.beta.is_none());
        }
        let json = serde_json::to_string(&out[0].1).unwrap();
        assert!(!json.contains("beta"));
    }

    #[test]
    fn zero_sigma_is_exact_and_sigma_is_recovered() {
        let s = gaussian();
        let exact = MeasurementModel { value: Some(ChannelNoise::AdditiveGaussian { sigma: 0.0 }), ..Default::default() };
        for (w, o) in sample_worlds(&s, &Regime::observational(), &exact, 2, 20).unwrap() {
            assert_eq!(o.value.unwrap(), w.value);
        }
        let noisy = MeasurementModel { value: Some(ChannelNoise::AdditiveGaussian { sigma: 0.1 }), ..Default::default() };
        let d: Vec<f64> = sample_worlds(&s, &Regime::observational(), &noisy, 3, 10_000)
            .unwrap()
            .into_iter()
            .map(|(w, o)| o.value.unwrap()[0] - w.value[0])
            .collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let sd = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64).sqrt();
        assert!((sd - 0.1).abs() < 0.005, "{sd}");
    }

    #[test]
    fn streams_repeat_and_count_one_works() {
        let s = gaussian();
        let a = sample_values(&s, &Regime::observational(), 0, 4, 100).unwrap();
        assert_eq!(a, sample_values(&s, &Regime::observational(), 0, 4, 100).unwrap());
        assert_eq!(sample_values(&s, &Regime::observational(), 0, 4, 1).unwrap().len(), 1);
        assert!(sample_values(&s, &Regime::observational(), 0, 4, 0).is_err());
    }

    #[test]
    fn flips_move_to_a_different_label() {
        let s = PoscmSpec::builder(1)
            .value_domain(0, Domain::finite(["a", "b", "c"]).unwrap())
            .mechanism(0, MechanismOperator::fixed_direct(|_, _| 1.0))
            .build()
            .unwrap();
        let om = MeasurementModel { value: Some(ChannelNoise::Flip { rate: 1.0 }), ..Default::default() };
        let obs = sample_observations(&s, &Regime::observational(), &om, 0, 200).unwrap();
        assert!(obs.iter().all(|o| o.value.as_ref().unwrap()[0] != 1.0));
        let bad = MeasurementModel { value: Some(ChannelNoise::AdditiveGaussian { sigma: 1.0 }), ..Default::default() };
        assert!(bad.validate(&s).is_err());
    }
}
