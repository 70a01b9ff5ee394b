#![no_main]

use lalr::data::{parse_csv, CsvSchema};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let schema = CsvSchema::with_targets(["y"]);
    if let Ok(ds) = parse_csv(data, &schema, "fuzz") {
        assert_eq!(ds.x.nrows(), ds.y.nrows());
        assert_eq!(ds.feature_names.len(), ds.features());
        assert!(ds.x.iter().chain(ds.y.iter()).all(|v| v.is_finite()));
    }
});
