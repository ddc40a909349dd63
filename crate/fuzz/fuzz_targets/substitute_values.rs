#![no_main]
use libfuzzer_sys::fuzz_target;
use sqldemo::sqlkit::substitute_values;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    // Split the input into prediction and gold at the first NUL.
    let (pred, gold) = s.split_once('\0').unwrap_or((s, s));
    if let Ok(sub) = substitute_values(pred, gold) {
        assert!(sub.replaced <= sub.pred_literals);
    }
});
