#![no_main]

use libfuzzer_sys::fuzz_target;
use partial_rl::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = RunConfig::from_json_str(text) {
            assert_eq!(RunConfig::from_json_str(&cfg.to_json_pretty()).unwrap(), cfg);
        }
    }
});
