#![no_main]

use libfuzzer_sys::fuzz_target;

// The TOML run configuration is the main user-supplied input surface.
fuzz_target!(|data: &[u8]| {
    if data.len() > 1 << 16 {
        return;
    }
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = fedfrec::config::RunConfig::from_toml_str(text);
    }
});
