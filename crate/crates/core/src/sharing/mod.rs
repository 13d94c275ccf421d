//! The sharing formalism: edge-colored layers, shared low-rank bases, layer
//! colorings with their color classes and automorphism groups, and storage
//! accounting for shared models.

mod accounting;
mod basis;
mod coloring;
mod edge;

pub use accounting::{compression_ratio, parameter_counts, Coefficient, ParameterCounts, SharedLayer, SharedModel};
pub use basis::{
    build_candidate_bases, fit_coefficient, fit_coefficient_as, kmeans_layers, reconstruct, reconstruct_coefficient,
    BasisStrategy, CoefficientForm, SharedBasis,
};
pub use coloring::{check_automorphism, color_classes, BasisId, ColorClasses, Coloring, ColoringRecord};
pub use edge::{ColorId, EdgeColoredLayer};
