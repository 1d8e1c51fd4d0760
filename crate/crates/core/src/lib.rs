pub mod error;
pub mod model;
pub mod quadrature;
pub mod rng;
pub mod toy;
pub mod voting;

pub use error::{LabError, Result};
pub use model::{sample_answer, sigmoid, success_probability, AnswerSample, SolverProfile, SyntheticQuestion};
pub use rng::{Domain, StreamKey};
pub use voting::{empirical_success_rate, filter_by_agreement, majority_vote, pseudo_label_distribution, PseudoLabel};
pub mod corpus;
pub mod questioner;
pub mod solver;
pub mod diagnostics;
