#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = patchprior::measure::parse_measure_csv(data, false);
    let _ = patchprior::measure::parse_measure_csv(data, true);
});
