#![no_main]

use levy_area_coupling::harness::{parse_records_csv, records_to_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok((layout, records)) = parse_records_csv(text) else {
        return;
    };
    let printed = records_to_csv(layout, &records).expect("parsed records match their layout");
    let (again_layout, again) = parse_records_csv(&printed).expect("printed records parse");
    assert_eq!(again_layout, layout);
    assert!(records.iter().zip(&again).all(|(a, b)| a.same_bits(b)));
});
