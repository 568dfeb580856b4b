use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Group fairness notion enforced by the post-processing step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    EqualizedOdds,
    EqualOpportunity,
    StatisticalParity,
}

impl Metric {
    pub fn tag(self) -> &'static str {
        match self {
            Metric::EqualizedOdds => "eo",
            Metric::EqualOpportunity => "eop",
            Metric::StatisticalParity => "sp",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "eo" => Ok(Metric::EqualizedOdds),
            "eop" => Ok(Metric::EqualOpportunity),
            "sp" => Ok(Metric::StatisticalParity),
            other => Err(Error::Input(format!(
                "unknown metric `{other}` (expected eo, eop or sp)"
            ))),
        }
    }
}

/// Global tolerance `eps_global` and one local tolerance per client.
/// A tolerance of 1 makes the corresponding constraints inert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessSpec {
    pub metric: Metric,
    pub eps_global: f64,
    pub eps_local: Vec<f64>,
}

impl FairnessSpec {
    pub fn new(metric: Metric, eps_global: f64, eps_local: Vec<f64>) -> Self {
        Self {
            metric,
            eps_global,
            eps_local,
        }
    }

    /// Same local tolerance for all `num_clients` clients.
    pub fn uniform(metric: Metric, eps_global: f64, eps_local: f64, num_clients: usize) -> Self {
        Self::new(metric, eps_global, vec![eps_local; num_clients])
    }

    pub fn validate(&self, num_clients: usize) -> Result<()> {
        let in_range = |e: f64| (0.0..=1.0).contains(&e);
        if !in_range(self.eps_global) {
            return Err(Error::Spec(format!(
                "eps_global = {} is outside [0, 1]",
                self.eps_global
            )));
        }
        if self.eps_local.len() != num_clients {
            return Err(Error::Spec(format!(
                "eps_local has {} entries but there are {} clients",
                self.eps_local.len(),
                num_clients
            )));
        }
        if let Some((c, e)) = self
            .eps_local
            .iter()
            .enumerate()
            .find(|(_, e)| !in_range(**e))
        {
            return Err(Error::Spec(format!(
                "eps_local[{c}] = {e} is outside [0, 1]"
            )));
        }
        Ok(())
    }
}

/// Checks a spec against a dataset's client count and returns it unchanged.
pub fn validate_spec(
    spec: &FairnessSpec,
    data: &crate::data::ClientGroupDataset,
) -> Result<FairnessSpec> {
    spec.validate(data.num_clients())?;
    Ok(spec.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_matching_local_vector() {
        let spec = FairnessSpec::uniform(Metric::EqualizedOdds, 0.01, 0.01, 2);
        assert!(spec.validate(2).is_ok());
    }

    #[test]
    fn rejects_length_mismatch() {
        let spec = FairnessSpec::uniform(Metric::EqualizedOdds, 0.01, 0.01, 3);
        assert!(matches!(spec.validate(2), Err(Error::Spec(_))));
    }

    #[test]
    fn rejects_out_of_range_global() {
        let spec = FairnessSpec::uniform(Metric::EqualizedOdds, 1.2, 0.01, 2);
        assert!(matches!(spec.validate(2), Err(Error::Spec(_))));
    }

    #[test]
    fn rejects_negative_local() {
        let spec = FairnessSpec::new(Metric::StatisticalParity, 0.1, vec![0.1, -0.1]);
        assert!(spec.validate(2).is_err());
    }

    #[test]
    fn metric_tags_round_trip() {
        for m in [
            Metric::EqualizedOdds,
            Metric::EqualOpportunity,
            Metric::StatisticalParity,
        ] {
            assert_eq!(Metric::from_tag(m.tag()).unwrap(), m);
        }
        assert!(Metric::from_tag("dp").is_err());
    }
}
