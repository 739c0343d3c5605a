use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown class id {id} in taxonomy {taxonomy}")]
    UnknownClassId { id: u32, taxonomy: String },

    #[error("label count {labels} does not match point count {points}")]
    LabelCountMismatch { labels: usize, points: usize },

    #[error("image {image_width}x{image_height} does not match camera model {model_width}x{model_height}")]
    DimensionMismatch {
        image_width: u32,
        image_height: u32,
        model_width: u32,
        model_height: u32,
    },

    #[error("out-of-order stamp {stamp} ns on stream {stream} (last was {last} ns)")]
    OutOfOrderStamp { stream: String, stamp: i64, last: i64 },

    #[error("pose count {poses} does not match cloud count {clouds}")]
    PoseCloudMismatch { poses: usize, clouds: usize },

    #[error("trajectory association produced zero pairs (max_dt {max_dt_ns} ns)")]
    NoAssociations { max_dt_ns: i64 },

    #[error("degenerate point configuration: {0}")]
    Degenerate(String),

    #[error("pose graph is underdetermined: {0}")]
    Underdetermined(String),

    #[error("invalid {what}: {message}")]
    Invalid { what: String, message: String },

    #[error("stage {stage} failed at frame {frame}: {source}")]
    Stage {
        stage: &'static str,
        frame: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(what: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invalid {
            what: what.into(),
            message: message.into(),
        }
    }

    pub fn at_stage(self, stage: &'static str, frame: usize) -> Self {
        Error::Stage {
            stage,
            frame,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
