use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("stream {stream}, event {event}: {reason}")]
    InvalidStream {
        stream: usize,
        event: usize,
        reason: String,
    },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("query time {time} is not after the last history time {last}")]
    HistoryOrder { time: f64, last: f64 },

    #[error("event type {k} out of range for {num_types} types")]
    TypeOutOfRange { k: usize, num_types: usize },

    #[error("explosion cap: more than {cap} events simulated")]
    ExplosionCap { cap: usize },

    #[error("noise sample at {time} collides with a real event")]
    NoiseCollision { time: f64 },

    #[error("non-finite objective at epoch {epoch}, minibatch {batch} (streams {streams:?})")]
    Diverged {
        epoch: usize,
        batch: usize,
        streams: Vec<usize>,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
