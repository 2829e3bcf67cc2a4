#![no_main]

use libfuzzer_sys::fuzz_target;
use plda_adapt::io;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(t) = io::parse_trials(text) {
        let again = io::format_trials(&t, None).expect("parsed trials format");
        assert_eq!(io::parse_trials(&again).expect("formatted trials parse"), t);
    }
});
