use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters or inconsistent configuration. `field` is a dotted
    /// path into the configuration document where one is known.
    #[error("configuration error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("unknown variable id `{0}`")]
    UnknownVariable(String),

    #[error("potential-outcome table does not cover rescue option `{option}` at week {week}")]
    Coverage { option: String, week: u32 },

    #[error("infeasible allocation target: {0}")]
    InfeasibleTarget(String),

    #[error("regime `{regime}` is not identifiable from these data: {reason}")]
    NotIdentifiable { regime: String, reason: String },

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("empty conditioning set: {0}")]
    EmptySet(String),

    #[error("rescue was not randomized independently of the trajectories: {0}; run positivity_check")]
    NotRandomized(String),

    #[error("positivity violated: {0}")]
    Positivity(String),

    #[error("dataset schema error: {0}")]
    Schema(String),

    #[error("replicate {index} (seed {seed}) failed: {source}")]
    Replicate {
        index: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by the inputs' shape rather than by the data.
    pub fn is_configuration(&self) -> bool {
        match self {
            Error::Config { .. }
            | Error::UnknownVariable(_)
            | Error::Coverage { .. }
            | Error::InfeasibleTarget(_)
            | Error::Schema(_)
            | Error::Json(_) => true,
            Error::Replicate { source, .. } => source.is_configuration(),
            _ => false,
        }
    }
}
