//! Feature-space variance analysis, FLOP accounting and communication cost.

pub mod comm;
pub mod flops;
pub mod pca;
pub mod variance;

pub use comm::{comm_cost_report, CommCost};
pub use flops::{count_flops, flop_breakdown, fusion_overhead, FlopCount, LayerCost};
pub use pca::{reduce_dims, Embedding};
pub use variance::{
    average_intra_class_variance, compare_feature_spaces, inter_class_variance,
    intra_class_variance, FeatureSpaceReport, VarianceRow,
};
