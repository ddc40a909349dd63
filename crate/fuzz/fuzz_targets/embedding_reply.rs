#![no_main]
use libfuzzer_sys::fuzz_target;
use sqldemo::embedding::parse_embedding_reply;

fuzz_target!(|data: &[u8]| {
    let Some((&n, rest)) = data.split_first() else { return };
    if let Ok(s) = std::str::from_utf8(rest) {
        if let Ok(vs) = parse_embedding_reply(s, usize::from(n % 8)) {
            assert_eq!(vs.len(), usize::from(n % 8));
            assert!(vs.iter().flatten().all(|x| x.is_finite()));
        }
    }
});
