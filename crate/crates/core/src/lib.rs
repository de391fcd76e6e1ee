pub mod cli;
pub mod curation;
pub mod error;
pub mod flaw;
pub mod format;
pub mod matching;
pub mod merge;
pub mod metrics;
pub mod pipeline;
pub mod scenes;
pub mod shift;
pub mod synthesis;
pub mod tensor_io;
pub mod warping;

pub use error::{Error, Result};
pub use format::format_g6;
