#![no_main]

use lalr::bench::ThresholdSource;
use lalr::{ActivationKind, LossSpec};
use lalr_cli::SeedArg;
use libfuzzer_sys::fuzz_target;

// Every value that parses must print back to something that parses to itself.
fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(v) = s.parse::<LossSpec>() {
        assert_eq!(v.to_string().parse::<LossSpec>().unwrap(), v);
    }
    if let Ok(v) = s.parse::<ActivationKind>() {
        assert_eq!(v.to_string().parse::<ActivationKind>().unwrap(), v);
    }
    if let Ok(v) = s.parse::<ThresholdSource>() {
        assert_eq!(v.to_string().parse::<ThresholdSource>().unwrap(), v);
    }
    if let Ok(SeedArg(seeds)) = s.parse::<SeedArg>() {
        assert!(!seeds.is_empty());
    }
});
