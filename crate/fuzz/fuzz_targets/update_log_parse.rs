#![no_main]

use libfuzzer_sys::fuzz_target;

// One line of the updates.jsonl log, as consumed by the stability pass.
fuzz_target!(|data: &[u8]| {
    if data.len() > 1 << 16 {
        return;
    }
    if let Ok(line) = std::str::from_utf8(data) {
        let _ = fedfrec::protocol::update_log::parse_line(line);
    }
});
