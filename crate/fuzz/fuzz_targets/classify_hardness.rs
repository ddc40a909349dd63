#![no_main]
use libfuzzer_sys::fuzz_target;
use sqldemo::sqlkit::classify_hardness;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(level) = classify_hardness(s) {
            let padded = format!(" \n{s}\t");
            assert_eq!(classify_hardness(&padded).ok(), Some(level));
        }
    }
});
