#![no_main]
use libfuzzer_sys::fuzz_target;
use sqldemo::sqlkit::normalize_sql;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        let once = normalize_sql(s);
        assert_eq!(normalize_sql(&once), once);
    }
});
