//! Parse arbitrary text as a key = value config file.
#![no_main]

use libfuzzer_sys::fuzz_target;

use fwpkm_cli::config_file::{apply_config_text, RunConfig};

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let mut config = RunConfig::default();
        let _ = apply_config_text(&mut config, text);
    }
});
