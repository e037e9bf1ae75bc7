//! Samples, cohorts, synthetic generation, node features and fold splitting.

mod cohort;
mod features;
mod folds;
mod io;
mod synthetic;

pub use cohort::{BoldSample, Cohort, ModulePartition};
pub use features::{node_features, pearson_matrix, uniform_graph, zero_variance_rows, NodeFeatureMode};
pub use folds::{stratified_kfold, FoldSplit};
pub use io::{format_f64, load_cohort, read_matrix_csv, save_cohort, write_matrix_csv};
pub use io::{read_json, write_json};
pub use synthetic::{generate_synthetic, generate_variance_cohort, ModuleSpec, PlantedBlock, SyntheticConfig};
