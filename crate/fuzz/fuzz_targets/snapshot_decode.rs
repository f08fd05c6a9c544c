//! Decode arbitrary bytes as a memory-state snapshot. Any input must yield
//! Ok or a clean storage error; panics and unbounded allocations are bugs.
#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let mut reader = data;
    let _ = fwpkm::snapshot::read_state(&mut reader);
});
