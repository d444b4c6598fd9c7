//! Uniform sampling of the uncertain device parameters and the Monte Carlo
//! campaign that turns parameter sets and load steps into a stored dataset.

mod campaign;
mod sampling;

pub use campaign::{
    config_hash, load_parameters, run_campaign, trajectory_file_name, CampaignConfig,
    DatasetManifest, ManifestEntry, DATASET_SCHEMA, MANIFEST_FILE, PARAMETERS_FILE,
};
pub use sampling::{
    sample_parameters, set_seed, AtlRanges, IbgRanges, ImRanges, ParameterSample, Range,
    SamplingMode, StaticRanges, UncertaintyRanges, IBG_CURRENT_LIMIT,
};
