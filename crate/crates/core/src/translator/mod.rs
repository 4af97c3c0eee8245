//! Stage 1: translating the exo hand layout into the ego view.

mod config;
mod mask;
mod matching;
mod model;

pub use config::{LayoutMode, TranslatorConfig};
pub use mask::{mask_ce_loss, mask_probabilities};
pub use matching::{assignment_cost, bipartite_match_loss, hungarian, l1, l1_cost_matrix, Match};
pub use model::{
    extract_patches, LayoutExample, LayoutTarget, LossEval, Translator, TranslatorState,
    CHECKPOINT_KIND,
};
