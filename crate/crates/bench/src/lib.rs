//! Fixtures shared by the benchmarks.

use stigpn::config::{Config, Preset};
use stigpn::data::synth::{synth_generate, SyntheticConfig};
use stigpn::train::prepare_all;
use stigpn::{Model, PreparedVideo};

/// A freshly initialized desk-preset model and `per_class * 4` prepared
/// synthetic videos.
pub fn desk_fixture(per_class: usize) -> (Model, Vec<PreparedVideo>) {
    let config = Config::preset(Preset::Desk);
    let samples = synth_generate(&SyntheticConfig {
        samples_per_class: per_class,
        seed: 1,
        ..Default::default()
    });
    let videos = prepare_all(&samples, &config, None).expect("synthetic data fits the desk preset");
    (Model::new(config).expect("desk preset is valid"), videos)
}
