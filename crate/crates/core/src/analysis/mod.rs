// SPDX-License-Identifier: MIT OR Apache-2.0

//! Vector geometry and pipeline ablations.

mod geometry;
mod pipeline;

pub use geometry::{
    agglomerative_cluster, cosine_distance_matrix, norm_table, Dendrogram, DistanceMatrix, Merge,
    NormRow,
};
pub use pipeline::{
    fraction_subset, pooling_ablation, sensitivity_sweep, PipelineRun, PoolingAblation,
    SensitivityCurve, SensitivityPoint, SteeringPipeline, DEFAULT_FRACTIONS,
};
