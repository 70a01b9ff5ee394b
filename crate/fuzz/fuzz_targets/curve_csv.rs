#![no_main]

use lalr::trainer::parse_curve_csv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = parse_curve_csv(data) {
        // One row per non-blank line after the header.
        let text = std::str::from_utf8(data).expect("parsed input is UTF-8");
        let lines = text.lines().skip(1).filter(|l| !l.trim().is_empty()).count();
        assert_eq!(rows.len(), lines);
    }
});
