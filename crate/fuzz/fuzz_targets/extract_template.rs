#![no_main]
use libfuzzer_sys::fuzz_target;
use sqldemo::sqlkit::extract_template;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(t) = extract_template(s) {
            assert!(!t.text.is_empty());
        }
    }
});
