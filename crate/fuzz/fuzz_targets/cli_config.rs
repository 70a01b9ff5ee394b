#![no_main]

use lalr_cli::CliConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = CliConfig::parse(text) {
            assert!(cfg.experiment.validate().is_ok());
        }
    }
});
