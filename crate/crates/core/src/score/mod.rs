//! Score functions R(x, a, c) and the predictors derived from them.

use std::fmt::Debug;
use std::sync::Arc;

use crate::error::{Error, Result};

pub mod softmax;
pub mod synthetic;

pub use softmax::{
    train_fedavg_softmax, ClientUpdate, FedAvgConfig, FedAvgTrainer, InputConvention, RoundLog,
    SoftmaxModel,
};
pub use synthetic::{
    generate_synthetic, FeatureModel, SyntheticOracle, SyntheticSpec, SCENARIO_PROPORTIONS,
};

/// Maps `(features, group, client)` to a probability vector over the classes.
pub trait ScoreModel: Send + Sync + Debug {
    fn num_classes(&self) -> usize;

    fn score(&self, features: &[f64], group: usize, client: usize) -> Vec<f64>;
}

pub type SharedModel = Arc<dyn ScoreModel>;

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// The plain argmax rule over a score model (theta = 1).
#[derive(Debug, Clone)]
pub struct ArgmaxPredictor {
    model: SharedModel,
}

impl ArgmaxPredictor {
    pub fn new(model: SharedModel) -> Self {
        Self { model }
    }

    pub fn model(&self) -> &SharedModel {
        &self.model
    }

    pub fn num_classes(&self) -> usize {
        self.model.num_classes()
    }

    pub fn predict(&self, features: &[f64], group: usize, client: usize) -> usize {
        argmax(&self.model.score(features, group, client))
    }
}

pub fn argmax_predictor(model: SharedModel) -> ArgmaxPredictor {
    ArgmaxPredictor::new(model)
}

/// Picks the class maximizing `theta_y * r_y(x, a, c)`.
#[derive(Debug, Clone)]
pub struct DerivedPredictor {
    model: SharedModel,
    theta: Vec<f64>,
}

impl DerivedPredictor {
    pub fn new(model: SharedModel, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != model.num_classes() {
            return Err(Error::Input(format!(
                "theta has {} entries for {} classes",
                theta.len(),
                model.num_classes()
            )));
        }
        if theta.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::Input(
                "theta entries must be finite and nonnegative".into(),
            ));
        }
        if theta.iter().all(|t| *t == 0.0) {
            return Err(Error::Input("theta must not be all zero".into()));
        }
        Ok(Self { model, theta })
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn predict(&self, features: &[f64], group: usize, client: usize) -> usize {
        derived_class(&self.theta, &self.model.score(features, group, client))
    }
}

pub fn derived_predictor(model: SharedModel, theta: Vec<f64>) -> Result<DerivedPredictor> {
    DerivedPredictor::new(model, theta)
}

/// Class chosen by the theta-weighted argmax of a score vector.
pub fn derived_class(theta: &[f64], scores: &[f64]) -> usize {
    let weighted: Vec<f64> = theta.iter().zip(scores).map(|(t, r)| t * r).collect();
    argmax(&weighted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[derive(Debug)]
    struct Fixed(Vec<f64>);

    impl ScoreModel for Fixed {
        fn num_classes(&self) -> usize {
            self.0.len()
        }
        fn score(&self, _: &[f64], _: usize, _: usize) -> Vec<f64> {
            self.0.clone()
        }
    }

    #[test]
    fn argmax_picks_largest() {
        let p = argmax_predictor(Arc::new(Fixed(vec![0.2, 0.5, 0.3])));
        assert_eq!(p.predict(&[0.0], 0, 0), 1);
    }

    #[test]
    fn argmax_tie_goes_to_lowest() {
        let p = argmax_predictor(Arc::new(Fixed(vec![0.5, 0.5])));
        assert_eq!(p.predict(&[0.0], 0, 0), 0);
    }

    #[test]
    fn weighted_choice() {
        let d =
            derived_predictor(Arc::new(Fixed(vec![0.3, 0.4, 0.3])), vec![2.0, 1.0, 1.0]).unwrap();
        assert_eq!(d.predict(&[0.0], 1, 0), 0);
    }

    #[test]
    fn zero_theta_rejected() {
        let m: SharedModel = Arc::new(Fixed(vec![0.3, 0.7]));
        assert!(derived_predictor(m.clone(), vec![0.0, 0.0]).is_err());
        assert!(derived_predictor(m, vec![-1.0, 1.0]).is_err());
    }

    proptest! {
        #[test]
        fn unit_theta_matches_argmax(raw in prop::collection::vec(0.0f64..1.0, 2..6)) {
            let s: f64 = raw.iter().sum::<f64>() + 1e-9;
            let r: Vec<f64> = raw.iter().map(|v| v / s).collect();
            let theta = vec![1.0; r.len()];
            prop_assert_eq!(derived_class(&theta, &r), argmax(&r));
        }

        #[test]
        fn positive_rescaling_is_invariant(
            raw in prop::collection::vec(0.0f64..1.0, 3),
            theta in prop::collection::vec(0.01f64..5.0, 3),
            lambda in prop::sample::select(vec![0.25, 0.5, 2.0, 4.0, 8.0]),
        ) {
            let scaled: Vec<f64> = theta.iter().map(|t| t * lambda).collect();
            prop_assert_eq!(derived_class(&theta, &raw), derived_class(&scaled, &raw));
        }
    }
}
