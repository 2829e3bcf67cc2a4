#![no_main]

use libfuzzer_sys::fuzz_target;
use plda_adapt::pipeline::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ExperimentConfig::from_json(text) {
        let _ = cfg.validate();
        let back = ExperimentConfig::from_json(&cfg.to_json()).expect("serialized config parses");
        assert_eq!(back.hash(), cfg.hash());
    }
});
