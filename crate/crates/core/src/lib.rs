//! Conformal reject options for probabilistic classifiers, together with
//! model-agnostic local explanations of why a sample was rejected.
//!
//! A rejected sample is explained by sampling its neighborhood, labeling each
//! neighbor by whether the reject option fires there, and fitting a shallow
//! decision tree to that local reject/accept problem. The tree is then read
//! either as a Gini feature-relevance profile or through its closest
//! counterfactual, the nearest point the tree no longer rejects.

pub mod classifiers;
pub mod cli;
pub mod conformal;
pub mod counterfactual;
pub mod data;
pub mod error;
pub mod experiments;
pub mod seed;
pub mod surrogate;

pub use classifiers::{Classifier, ClassifierKind, Hyperparams, Model, ProbVector};
pub use conformal::{AugmentedPrediction, ArCurve, ConformalPredictor, Knee, Label, RejectOption};
pub use counterfactual::{CfConfig, LeafBox};
pub use data::{Dataset, FoldAssignment, ScalerParams, SyntheticSpec};
pub use error::{Error, Result};
pub use surrogate::{Explanation, ExplanationMode, LocalDataset, NeighborhoodConfig};
