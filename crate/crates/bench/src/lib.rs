//! Shared fixtures for the benchmarks.

use mixb2d::eval::{synth_generate, SyntheticSpec};
use mixb2d::model::{self, LatentPosterior};
use mixb2d::{data::SampleSet, MixtureParams};

/// A synthetic problem with freshly initialized parameters.
pub struct Fixture {
    pub data: SampleSet,
    pub params: MixtureParams,
    pub prior: LatentPosterior,
}

impl Fixture {
    /// `n` square `side × side` images from `k` separated components with
    /// `rank × rank` cores.
    pub fn new(side: usize, n: usize, k: usize, rank: usize) -> Self {
        let rank = rank.min(side);
        let spec = SyntheticSpec::separated(k, (side, side, rank, rank), 10.0, 1.0, 0.01, n, 7);
        let (data, _) = synth_generate(&spec).expect("valid synthetic spec");
        let params = model::init(&data, k, rank, rank, 7).expect("initialization");
        let prior = LatentPosterior::prior(n, k, rank, rank);
        Self {
            data,
            params,
            prior,
        }
    }
}
