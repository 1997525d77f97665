#![no_main]

use libfuzzer_sys::fuzz_target;

// Snapshot files are read back when resuming training; parsing arbitrary
// bytes must reject cleanly, never panic.
fuzz_target!(|data: &[u8]| {
    if data.len() > 1 << 16 {
        return;
    }
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = fedfrec::protocol::snapshot::parse(text);
    }
});
