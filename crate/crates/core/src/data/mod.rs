//! Forecast cubes, ensemble spread, dataset splits, normalization, the cube
//! file format and the synthetic ensemble generator.

mod cube;
mod normalize;
mod split;
mod spread;
mod store;
mod synth;

pub use cube::{
    lead_hours, read_cube, write_cube, Cube, ForecastCube, Grid, SpreadCube, LEAD_STEPS, STEP_HOURS,
};
pub use normalize::{Affine, Normalizer, NormalizerFit, Range};
pub use split::{chronological_split, DatasetIndex, Splits};
pub use spread::{compute_spread, spread_values, EnsembleRun, SpreadEstimator};
pub use store::{member_file, read_run, write_run, Archive, RunSource, CONTROL_FILE, SPREAD_FILE};
pub use synth::{synth_ensemble, Bump, SynthConfig};
