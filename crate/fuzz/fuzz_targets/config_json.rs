#![no_main]

use libfuzzer_sys::fuzz_target;
use meshswap::config::RunConfig;

// Arbitrary bytes must never panic the config parser; accepted configs must
// survive a serialize/parse round trip.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(config) = RunConfig::from_json(text) {
        let json = serde_json::to_string(&config).unwrap();
        let back = RunConfig::from_json(&json).unwrap();
        assert_eq!(back, config);
    }
});
