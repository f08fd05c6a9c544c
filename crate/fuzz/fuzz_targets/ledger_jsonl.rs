//! Parse arbitrary bytes as a JSON-lines ledger sidecar.
#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let mut reader = data;
    let _ = fwpkm::snapshot::read_ledger(&mut reader);
});
