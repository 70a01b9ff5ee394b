#![no_main]

use lalr::data::Manifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m) = Manifest::parse(text) {
            let again = Manifest::parse(&serde_json::to_string(&m).unwrap()).unwrap();
            assert_eq!(m, again);
        }
    }
});
