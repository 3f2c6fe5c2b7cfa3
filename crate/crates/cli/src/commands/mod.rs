mod bank;
mod eval;
mod infer;
mod serve;
mod tuning;

pub use bank::{cmd_build_bank, cmd_index, RecallReport};
pub use eval::cmd_eval;
pub use infer::{cmd_infer, InferRecord};
pub use serve::cmd_serve;
pub use tuning::{cmd_bench, cmd_calibrate};
