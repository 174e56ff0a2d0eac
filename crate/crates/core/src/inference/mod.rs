//! Discriminator-guided expert selection and dataset evaluation.

mod evaluate;
mod select;

pub use evaluate::{
    comparison_grid, evaluate, grid_path, EvalReport, ImageResult, Means, PartitionSummary, BORDER,
    GRID_DIR, REPORT_FILE,
};
pub use select::{
    argmax_first, output_psnrs, restore_oracle, restore_select, ExpertSet, OracleResult,
    SelectionResult,
};
