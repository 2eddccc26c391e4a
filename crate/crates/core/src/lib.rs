pub mod error;
pub mod textproc;

pub use error::{Error, Result};
pub mod align;
pub mod backtranslate;
pub mod embed;
pub mod evalfair;
pub mod mtmodel;
pub mod pipeline;
pub mod vmf;
