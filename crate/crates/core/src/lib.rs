//! Fusion of incomplete, conflicting categorical reports into per-entity
//! hidden-state sequences with a shared three-state hidden Markov model.

pub mod agreement;
pub mod decode;
pub mod em;
pub mod error;
pub mod inference;
pub mod model;
pub mod observation;
pub mod pipeline;
pub mod report;
pub mod synthetic;

pub use em::{accumulate_statistics, baum_welch, baum_welch_restarts, RestartFit, EmConfig, EmResult, SufficientStatistics};
pub use error::{Error, Result};
pub use inference::{emission_log_factor, forward_backward, sequence_log_likelihood, viterbi, Posteriors};
pub use model::{Modality, ModelParameters, NUM_STATES};
pub use observation::{Cell, ObservationSequence, WeekIndex};
pub use agreement::{agreement_matrix, agreement_ttest, AgreementMatrix, SampleUnit, TTest};
pub use decode::{assign_labels, decode_all, label_model, DecodeMode, LabelAssignment, PosteriorDecode};
pub use report::{state_snapshot, trend_report, Stratifier, TrendReport};
pub use synthetic::{generate, score_recovery, GeneratorConfig, Missingness, SyntheticCorpus};
