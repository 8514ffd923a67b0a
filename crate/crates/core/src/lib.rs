//! Membership-privacy auditing of equalized-odds fair learning.
//!
//! The crate trains unconstrained and fairness-constrained classifiers on
//! group-structured binary data, attacks them with loss-threshold membership
//! inference (one global threshold or one threshold per `(group, label)`
//! subgroup), and reports per-point and per-subgroup privacy risk, privacy
//! cost and memorization.
//!
//! Module map:
//! - [`dataset`]: data points, synthetic generation, CSV ingestion, membership masks.
//! - [`learners`]: weighted feed-forward network and decision tree base learners.
//! - [`fair_reduction`]: exponentiated-gradient reduction and fairness metrics.
//! - [`audit`]: loss profiles, threshold adversaries, risk/cost/memorization.
//! - [`harness`]: experiment configs, pool training, sweeps and file outputs.

pub mod audit;
pub mod dataset;
pub mod fair_reduction;
pub mod harness;
pub mod kv;
pub mod learners;
pub mod seed;

pub use audit::{LossProfile, PrivacyReport, ThresholdRule};
pub use dataset::{DataPoint, Dataset, MembershipMask, SubgroupKey, SyntheticConfig};
pub use fair_reduction::{EgConfig, RandomizedClassifier};
pub use learners::{BaseModel, LearnerSpec, SampleWeights};
