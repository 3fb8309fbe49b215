#![no_main]

use levy_area_coupling::harness::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(config) = ExperimentConfig::parse(text) else {
        return;
    };
    // Whatever parses must print back to the same settings.
    let again = ExperimentConfig::parse(&config.to_text()).expect("printed config parses");
    assert_eq!(again.to_text(), config.to_text());
    let _ = config.validate();
});
