//! Observational equivalence of two models over a family of regimes.

use serde::Serialize;

use crate::domain::Domain;
use crate::error::{PoscmError, Result};
use crate::interventions::Regime;
use crate::measure::{sample_observations, ChannelNoise, MeasurementModel, Observation};
use crate::rng::derive_seed;
use crate::spec::PoscmSpec;
use crate::stats::{bonferroni, two_sample, EmpiricalLaw, TwoSampleResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ObservedChannel {
    Value,
    Context,
    Adjacency,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChannelTest {
    pub regime: String,
    pub channel: ObservedChannel,
    pub node: usize,
    /// Source of the dyad for adjacency tests.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<usize>,
    pub result: TwoSampleResult,
    pub corrected_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Overall {
    Indistinguishable,
    Distinguished { regime: String, channel: ObservedChannel, node: usize, source: Option<usize>, corrected_p: f64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceVerdict {
    pub tests: Vec<ChannelTest>,
    pub overall: Overall,
    pub alpha: f64,
    pub n_per: usize,
}

impl EquivalenceVerdict {
    pub fn distinguished(&self) -> bool {
        matches!(self.overall, Overall::Distinguished { .. })
    }

    pub fn min_corrected_p(&self) -> f64 {
        self.tests.iter().map(|t| t.corrected_p).fold(1.0, f64::min)
    }

    pub fn regime_tests(&self, regime: &str) -> impl Iterator<Item = &ChannelTest> {
        let regime = regime.to_string();
        self.tests.iter().filter(move |t| t.regime == regime)
    }
}

fn law(samples: Vec<f64>, labels: bool) -> Result<EmpiricalLaw> {
    if labels {
        EmpiricalLaw::from_label_values(&samples)
    } else {
        EmpiricalLaw::scalar(samples)
    }
}

fn label_channel(a: &Domain, b: &Domain, noise: ChannelNoise) -> bool {
    a.is_finite() && b.is_finite() && !matches!(noise, ChannelNoise::AdditiveGaussian { .. })
}

fn column(obs: &[Observation], pick: impl Fn(&Observation) -> f64) -> Vec<f64> {
    obs.iter().map(pick).collect()
}

/// Two-sample tests of every observed channel of `spec_a` against `spec_b`
/// under each regime of `family`, Bonferroni-corrected over all tests. The
/// two models are sampled with independent seeds.
pub fn check_equivalence(
    spec_a: &PoscmSpec,
    spec_b: &PoscmSpec,
    family: &[Regime],
    om: &MeasurementModel,
    n_per: usize,
    alpha: f64,
    seed: u64,
) -> Result<EquivalenceVerdict> {
    if spec_a.n() != spec_b.n() {
        return Err(PoscmError::InvalidParameter(format!("{} vs {} nodes", spec_a.n(), spec_b.n())));
    }
    if family.is_empty() {
        return Err(PoscmError::InvalidParameter("empty regime family".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(PoscmError::InvalidParameter(format!("alpha = {alpha}")));
    }
    if n_per < 2 {
        return Err(PoscmError::InsufficientSamples(format!("n_per = {n_per}")));
    }
    let n = spec_a.n();
    let (seed_a, seed_b) = (derive_seed(seed, 0xA), derive_seed(seed, 0xB));
    let mut pending: Vec<(String, ObservedChannel, usize, Option<usize>, TwoSampleResult)> = Vec::new();
    for (k, regime) in family.iter().enumerate() {
        let xa = sample_observations(spec_a, regime, om, derive_seed(seed_a, k as u64), n_per)?;
        let xb = sample_observations(spec_b, regime, om, derive_seed(seed_b, k as u64), n_per)?;
        let mut push = |channel, node, source, r| pending.push((regime.label.clone(), channel, node, source, r));
        if let Some(noise) = om.value {
            for i in 0..n {
                let labels = label_channel(&spec_a.value_domain[i], &spec_b.value_domain[i], noise);
                let pick = |o: &Observation| o.value.as_ref().expect("value channel")[i];
                let r = two_sample(&law(column(&xa, pick), labels)?, &law(column(&xb, pick), labels)?)?;
                push(ObservedChannel::Value, i, None, r);
            }
        }
        if let Some(noise) = om.beta {
            for i in 0..n {
                let labels = label_channel(&spec_a.context_domain[i], &spec_b.context_domain[i], noise);
                let pick = |o: &Observation| o.beta.as_ref().expect("context channel")[i];
                let r = two_sample(&law(column(&xa, pick), labels)?, &law(column(&xb, pick), labels)?)?;
                push(ObservedChannel::Context, i, None, r);
            }
        }
        if om.adjacency.is_some() {
            for i in 0..n {
                for &j in spec_a.potential_parents(i) {
                    let pick = |o: &Observation| f64::from(u8::from(o.adjacency.as_ref().expect("adjacency channel")[j * n + i]));
                    let r = two_sample(&law(column(&xa, pick), true)?, &law(column(&xb, pick), true)?)?;
                    push(ObservedChannel::Adjacency, i, Some(j), r);
                }
            }
        }
    }
    if pending.is_empty() {
        return Err(PoscmError::InvalidParameter("measurement model observes no channel".into()));
    }
    let corrected = bonferroni(&pending.iter().map(|t| t.4.p_value).collect::<Vec<_>>());
    let tests: Vec<ChannelTest> = pending
        .into_iter()
        .zip(corrected)
        .map(|((regime, channel, node, source, result), corrected_p)| ChannelTest { regime, channel, node, source, result, corrected_p })
        .collect();
    let overall = tests
        .iter()
        .filter(|t| t.corrected_p < alpha)
        .min_by(|a, b| a.corrected_p.total_cmp(&b.corrected_p))
        .map_or(Overall::Indistinguishable, |t| Overall::Distinguished {
            regime: t.regime.clone(),
            channel: t.channel,
            node: t.node,
            source: t.source,
            corrected_p: t.corrected_p,
        });
    Ok(EquivalenceVerdict { tests, overall, alpha, n_per })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identify::twins::{calibrated_confounding_pair, reparameterize_context, ContextMap};
    use crate::interventions::Intervention;
    use crate::models::zoo::{copy_edge_intervention, KernelModel};

    fn node_family() -> Vec<Regime> {
        vec![
            Regime::observational(),
            Regime::do_values("do0", &[(0, 0.0)]).unwrap(),
            Regime::do_values("do1", &[(0, 1.0)]).unwrap(),
        ]
    }

    #[test]
    fn calibrated_pair_is_node_equivalent_but_edge_distinguishable() {
        let (m, mp) = calibrated_confounding_pair(0.5, 0.2, 0.8, 0.8).unwrap();
        let om = MeasurementModel::values_only();
        let v = check_equivalence(&m, &mp, &node_family(), &om, 5000, 0.01, 3).unwrap();
        assert!(!v.distinguished(), "{:?}", v.overall);
        let mut family = node_family();
        for x in [0.0, 1.0] {
            let node = Regime::do_values("d", &[(0, x)]).unwrap();
            let copy = Regime::new("c", vec![copy_edge_intervention()]).unwrap();
            family.push(node.combined(&copy, format!("copy+do{x}")).unwrap());
        }
        let v = check_equivalence(&m, &mp, &family, &om, 5000, 0.01, 3).unwrap();
        assert!(v.distinguished());
        let Overall::Distinguished { regime, node, .. } = &v.overall else { unreachable!() };
        assert!(regime.starts_with("copy"));
        assert_eq!(*node, 1);
    }

    #[test]
    fn label_swap_is_hidden_unless_contexts_are_observed() {
        let spec = KernelModel::default().spec().unwrap();
        let twin = reparameterize_context(&spec, &ContextMap::swap(0, 1, 2)).unwrap();
        let family = vec![
            Regime::observational(),
            Regime::do_values("do1", &[(1, 1.0)]).unwrap(),
            Regime::new("edge", vec![Intervention::v_edge_clamp(0, 3, vec![1.0, 1.0])]).unwrap(),
        ];
        let latent = check_equivalence(&spec, &twin, &family, &MeasurementModel::values_only(), 2000, 0.01, 8).unwrap();
        assert!(!latent.distinguished());
        assert_eq!(latent.tests.len(), 3 * KernelModel::N);
        let seen = check_equivalence(&spec, &twin, &family, &MeasurementModel::values_and_contexts(), 2000, 0.01, 8).unwrap();
        let Overall::Distinguished { channel, .. } = seen.overall else { panic!("swap not detected") };
        assert_eq!(channel, ObservedChannel::Context);
    }

    #[test]
    fn adjacency_channel_counts_potential_dyads() {
        let spec = KernelModel::default().spec().unwrap();
        let v = check_equivalence(&spec, &spec, &[Regime::observational()], &MeasurementModel::everything(), 200, 0.01, 1).unwrap();
        let dyads = (0..KernelModel::N).map(|i| spec.potential_parents(i).len()).sum::<usize>();
        assert_eq!(v.tests.len(), 2 * KernelModel::N + dyads);
        assert!(v.tests.iter().all(|t| t.corrected_p <= 1.0));
    }

    #[test]
    fn rejects_bad_arguments() {
        let spec = KernelModel::default().spec().unwrap();
        let om = MeasurementModel::values_only();
        assert!(check_equivalence(&spec, &spec, &[], &om, 100, 0.01, 0).is_err());
        assert!(check_equivalence(&spec, &spec, &node_family(), &om, 100, 1.5, 0).is_err());
        let (m, _) = calibrated_confounding_pair(0.5, 0.2, 0.8, 0.8).unwrap();
        assert!(check_equivalence(&spec, &m, &node_family(), &om, 100, 0.01, 0).is_err());
    }
}
