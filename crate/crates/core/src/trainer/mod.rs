//! Two-flow training.

pub mod flows;
pub mod gradcheck;
pub mod losses;
pub mod train;

pub use flows::{run_cr_flow, run_rc_flow, FlowOptions, FlowOutputs, FlowVars};
pub use losses::{
    build_loss, coefficients, consistency_terms, evaluate_terms, total_loss, Ablation, FlowMode, GraphLoss, LossTerms,
    LossWeights, TERM_COUNT,
};
pub use train::{read_log, train, LogRow, LrSchedule, TrainConfig, TrainReport};
