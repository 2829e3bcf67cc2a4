#![no_main]

use libfuzzer_sys::fuzz_target;
use plda_adapt::{eval, io};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok((trials, scores)) = io::parse_scores(text) {
        if let Ok(labeled) = trials.labeled_scores(&scores) {
            if let Ok(m) = eval::compute_metrics(&labeled) {
                assert!((0.0..=1.0).contains(&m.eer));
            }
        }
    }
});
