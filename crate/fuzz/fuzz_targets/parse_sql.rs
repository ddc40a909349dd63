#![no_main]
use libfuzzer_sys::fuzz_target;
use sqldemo::sqlkit::parse;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(q) = parse(s) {
            // Every clause span must slice the source on char boundaries.
            for c in &q.select.clauses {
                let _ = q.text(&c.span);
            }
            let _ = q.select.has_order_by();
        }
    }
});
