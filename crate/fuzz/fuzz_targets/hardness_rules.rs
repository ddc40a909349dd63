#![no_main]
use libfuzzer_sys::fuzz_target;
use sqldemo::sqlkit::HardnessRules;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(rules) = HardnessRules::parse(s) {
            let _ = rules.classify("SELECT a FROM t WHERE b = 1");
        }
    }
});
