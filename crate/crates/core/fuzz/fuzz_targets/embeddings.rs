#![no_main]

use libfuzzer_sys::fuzz_target;
use plda_adapt::io;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(x) = io::parse_embeddings(text) {
        let again = io::format_embeddings(&x, None).expect("parsed set formats");
        let back = io::parse_embeddings(&again).expect("formatted set parses");
        assert_eq!(back.ids(), x.ids());
    }
});
