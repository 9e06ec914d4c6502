//! Experiment configuration parser: any text must parse to a valid
//! configuration or fail cleanly; accepted documents survive a round trip.
#![no_main]

use fiberfrp::experiment::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(config) = ExperimentConfig::from_toml(text) {
        let again = ExperimentConfig::from_toml(&config.to_toml().expect("serializes")).expect("reparses");
        assert_eq!(again.hash().expect("hash"), config.hash().expect("hash"));
    }
});
