//! Operating-point sampling, fault screening and dataset assembly.

mod cases;
mod cct;
mod dataset;
pub mod lhs;

pub use cases::{commit_machines, dispatch_fractions, hierarchical_lhs, SampledCase, SamplingConfig};
pub use cct::{compute_cct, recovers, CctFlag, CctResult, CctSearch, CYCLE};
pub use dataset::{
    build_datasets, candidate_buses, cross_product, label_requires_shedding, rank_and_sample_contingencies,
    sample_duration, split_by_zone, split_disjoint, stratified_order, Contingency, LabeledScenario, Role, ScenarioDataset,
    CSV_HEADER,
};
