//! Custom keyword spotting from scratch: log-mel front end, a reverse-mode
//! autodiff tape, a stacked-LSTM utterance embedder trained with a
//! centroid-based triplet loss, DET/EER/AUC evaluation, and the experiment
//! drivers (training, evaluation, data-resource sweeps, interpolation).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod data;
pub mod exec;
pub mod experiment;
pub mod frontend;
pub mod loss;
pub mod metrics;
pub mod model;

use thiserror::Error;

pub use exec::Exec;

/// Top-level error; [`Error::exit_code`] maps it onto the CLI contract
/// (2 = data error, 3 = numerical failure).
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] data::DataError),
    #[error(transparent)]
    Frontend(#[from] frontend::FrontendError),
    #[error(transparent)]
    Autodiff(#[from] autodiff::AutodiffError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Checkpoint(#[from] model::CheckpointError),
    #[error(transparent)]
    Loss(#[from] loss::LossError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error(transparent)]
    Experiment(#[from] experiment::ExperimentError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn is_numerical(&self) -> bool {
        use autodiff::AutodiffError as A;
        matches!(
            self,
            Error::Autodiff(A::NonFinite { .. } | A::ZeroNorm { .. })
            | Error::Model(model::ModelError::NonFinite(_))
            | Error::Model(model::ModelError::Autodiff(A::NonFinite { .. } | A::ZeroNorm { .. }))
            | Error::Loss(loss::LossError::NonFinite | loss::LossError::DegenerateCentroid(_))
            | Error::Metrics(metrics::MetricsError::DegenerateCentroid(_))
            | Error::Experiment(experiment::ExperimentError::NumericalFailure(_))
        )
    }

    pub fn exit_code(&self) -> i32 {
        if self.is_numerical() {
            3
        } else {
            2
        }
    }
}

pub(crate) fn io_context(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> Error {
    let context = context.into();
    move |source| Error::Io { context, source }
}
