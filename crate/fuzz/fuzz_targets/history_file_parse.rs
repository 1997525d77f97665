#![no_main]

use libfuzzer_sys::fuzz_target;

// One line of a histories.jsonl file; structural validation (unique page
// ids, sorted visit ages) runs as part of parsing.
fuzz_target!(|data: &[u8]| {
    if data.len() > 1 << 16 {
        return;
    }
    if let Ok(line) = std::str::from_utf8(data) {
        let _ = fedfrec::clients::parse_history_line(line);
    }
});
