//! Twin neural uplift models for randomized experiments.
//!
//! * [`dgp`]: synthetic trials with known true uplift.
//! * [`model`]: interaction and hidden-layer twin models in split storage.
//! * [`loss`]: uplift, log-likelihood and plain cross-entropy losses with
//!   analytic gradients.
//! * [`optim`]: proximal mini-batch SGD with lasso and node pruning.
//! * [`qini`]: Qini curve, Qini coefficient, Kendall uplift correlation.
//! * [`bench`]: splitting, grid search and repeated benchmarks.

// Guards like `!(x > 0.0)` are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod bench;
pub mod dataset;
pub mod dgp;
pub mod error;
pub mod loss;
pub mod model;
pub mod optim;
pub mod qini;

pub use dataset::{split, Dataset, SplitFractions};
pub use dgp::{generate_dataset, Scenario};
pub use error::{Error, Result};
pub use loss::{check_gradients, uplift_loss_batch, LossKind};
pub use model::{construct_nn_from_interaction, Arch, TwinOutput, TwinParams};
pub use optim::{train, RegKind, TrainConfig, TrainTrace};
pub use qini::{evaluate, EvalConfig, QiniReport};
