//! TOML description of a tabular hidden Markov model and its observations.
//!
//! ```toml
//! initial = [0.5, 0.5]
//! transition = [[0.9, 0.1], [0.1, 0.9]]
//! observations = [0.3, -1.2, 0.8]
//!
//! [emission]
//! kind = "gaussian"
//! means = [-1.0, 1.0]
//! std_dev = 1.0
//! ```
//!
//! A table emission uses `kind = "table"` with a `probs` matrix (one row per
//! state), and its observations are symbol indices. When `observations` is
//! absent they can be simulated from the model with [`ModelSpec::simulate`].

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm::{Emission, Observation, ObservationRecord, TabularHmm};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EmissionSpec {
    Table { probs: Vec<Vec<f64>> },
    Gaussian { means: Vec<f64>, std_dev: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub initial: Vec<f64>,
    pub transition: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observations: Option<Vec<f64>>,
    pub emission: EmissionSpec,
}

impl ModelSpec {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read model file {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Builds the model, reporting the first invariant it violates.
    pub fn model<S: Real>(&self) -> Result<TabularHmm<S>> {
        let conv = |v: &[f64]| v.iter().map(|&x| S::lit(x)).collect::<Vec<S>>();
        let emission = match &self.emission {
            EmissionSpec::Table { probs } => Emission::Table(probs.iter().map(|r| conv(r)).collect()),
            EmissionSpec::Gaussian { means, std_dev } => Emission::Gaussian {
                means: conv(means),
                std_dev: S::lit(*std_dev),
            },
        };
        TabularHmm::new(
            conv(&self.initial),
            self.transition.iter().map(|r| conv(r)).collect(),
            emission,
        )
    }

    /// The observations stored in the file, if any.
    pub fn observations<S: Real>(&self) -> Result<Option<ObservationRecord<Observation<S>>>> {
        let Some(values) = &self.observations else {
            return Ok(None);
        };
        let mut out = Vec::with_capacity(values.len());
        for (t, &v) in values.iter().enumerate() {
            out.push(match self.emission {
                EmissionSpec::Table { .. } => {
                    if !(v >= 0.0 && v.fract() == 0.0 && v < usize::MAX as f64) {
                        return Err(Error::InvalidModel(format!(
                            "observation {} is {v}; table emissions take symbol indices",
                            t + 1
                        )));
                    }
                    Observation::Symbol(v as usize)
                }
                EmissionSpec::Gaussian { .. } => Observation::Value(S::lit(v)),
            });
        }
        let record = ObservationRecord::new(out)?;
        self.model::<S>()?.check_observations(&record)?;
        Ok(Some(record))
    }

    /// Simulates `len` observations from the model.
    pub fn simulate<S: Real>(&self, len: usize, seed: u64) -> Result<ObservationRecord<Observation<S>>> {
        let model = self.model::<S>()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(model.simulate(len, &mut rng).1)
    }

    /// Replaces the stored observations with `record`.
    pub fn with_observations<S: Real>(mut self, record: &ObservationRecord<Observation<S>>) -> Self {
        self.observations = Some(
            record
                .iter()
                .map(|y| match y {
                    Observation::Symbol(s) => *s as f64,
                    Observation::Value(v) => v.as_f64(),
                })
                .collect(),
        );
        self
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model spec is always serializable")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GAUSS: &str = r#"
initial = [0.5, 0.5]
transition = [[0.9, 0.1], [0.1, 0.9]]
observations = [0.3, -1.2, 0.8]

[emission]
kind = "gaussian"
means = [-1.0, 1.0]
std_dev = 1.0
"#;

    const TABLE: &str = r#"
initial = [0.2, 0.3, 0.5]
transition = [[0.5, 0.25, 0.25], [0.1, 0.8, 0.1], [0.3, 0.3, 0.4]]
observations = [0, 1, 1, 0]

[emission]
kind = "table"
probs = [[0.9, 0.1], [0.5, 0.5], [0.2, 0.8]]
"#;

    #[test]
    fn parses_gaussian_model() {
        let spec = ModelSpec::parse(GAUSS).unwrap();
        let m = spec.model::<f64>().unwrap();
        assert_eq!(m.num_states(), 2);
        let obs = spec.observations::<f64>().unwrap().unwrap();
        assert_eq!(obs.len(), 3);
        assert_eq!(*obs.get(1), Observation::Value(-1.2));
    }

    #[test]
    fn parses_table_model_in_f32() {
        let spec = ModelSpec::parse(TABLE).unwrap();
        let m = spec.model::<f32>().unwrap();
        assert_eq!(m.num_states(), 3);
        let obs = spec.observations::<f32>().unwrap().unwrap();
        assert_eq!(*obs.get(2), Observation::Symbol(1));
    }

    #[test]
    fn rejects_bad_rows_and_symbols() {
        let bad = TABLE.replace("[0.1, 0.8, 0.1]", "[0.1, 0.8, 0.2]");
        let err = ModelSpec::parse(&bad).unwrap().model::<f64>().unwrap_err();
        assert!(err.to_string().contains("sums to"), "{err}");

        let bad = TABLE.replace("[0, 1, 1, 0]", "[0, 1, 2, 0]");
        let err = ModelSpec::parse(&bad).unwrap().observations::<f64>().unwrap_err();
        assert!(err.to_string().contains("observation 3"), "{err}");

        let bad = TABLE.replace("[0, 1, 1, 0]", "[0, 1.5]");
        assert!(ModelSpec::parse(&bad).unwrap().observations::<f64>().is_err());
    }

    #[test]
    fn rejects_unknown_keys() {
        let bad = GAUSS.replace("std_dev", "sd");
        assert!(ModelSpec::parse(&bad).is_err());
    }

    #[test]
    fn round_trips_with_simulated_observations() {
        let spec = ModelSpec::parse(GAUSS).unwrap();
        let obs = spec.simulate::<f64>(7, 3).unwrap();
        let spec2 = ModelSpec::parse(&spec.clone().with_observations(&obs).to_toml()).unwrap();
        assert_eq!(spec2.observations::<f64>().unwrap().unwrap().as_slice(), obs.as_slice());
    }
}
