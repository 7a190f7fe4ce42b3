#![no_main]
use libfuzzer_sys::fuzz_target;

// seed format: one JSON sidecar line, then the raw payload bytes
fuzz_target!(|data: &[u8]| {
    let split = data.iter().position(|&b| b == b'\n').unwrap_or(data.len());
    let (sidecar, rest) = data.split_at(split);
    let raw = rest.get(1..).unwrap_or(&[]);
    let _ = patchprior::io::parse_raw(sidecar, raw);
});
