//! Decode arbitrary bytes as a layer-weight snapshot.
#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let mut reader = data;
    let _ = fwpkm::snapshot::read_layer_weights(&mut reader);
});
