//! Counterfactual multimodal recommendation: a modality-aware graph
//! recommender, an item-only predictor and the inference-time correction
//! that subtracts the direct item effect.

mod counterfactual;
mod graphs;
mod losses;
mod model;

pub use counterfactual::{counterfactual_adjust, AdjustedScores, Scorer};
pub use graphs::{
    aggregation_matrix, build_modality_graph, cosine, modality_aware_features, normalized_interactions, ModalityGraph,
};
pub use losses::{bpr_loss, bpr_losses, contrastive_loss, BprLosses};
pub use model::{
    aggregate_id_embeddings, cross_modal_attention, high_order_propagation, inject_modal, item_score, modality_side,
    predict_matching, CfmrConfig, RecContext, RecForward, Recommender, Scores,
};
