//! Post-training analysis: explicit ensembles, feature-map redundancy and
//! image export.

mod ensemble;
mod export;
mod mss;

pub use ensemble::{ensemble_average, ensemble_predict, EnsemblePrediction, ROW_SUM_TOL};
pub use export::{export_feature_maps, to_gray, write_pgm};
pub use mss::{extract_features, lambda_score, layer_mss, mss_csv, mss_score, FeatureBank, MSS_HEADER};
