#![no_main]
use libfuzzer_sys::fuzz_target;
use sqldemo::DemonstrationPool;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(pool) = DemonstrationPool::from_jsonl(s) {
            let again = DemonstrationPool::from_jsonl(&pool.to_jsonl()).expect("round trip");
            assert_eq!(again.demonstrations(), pool.demonstrations());
        }
    }
});
