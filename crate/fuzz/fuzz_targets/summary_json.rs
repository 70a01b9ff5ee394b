#![no_main]

use lalr::bench::Summary;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(s) = Summary::parse(text) {
            let _ = s.to_json();
        }
    }
});
