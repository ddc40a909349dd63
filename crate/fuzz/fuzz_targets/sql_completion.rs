#![no_main]
use libfuzzer_sys::fuzz_target;
use sqldemo::llm::{parse_question_completion, parse_sql_completion};

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        let sql = parse_sql_completion(s);
        assert!(!sql.contains(';'));
        assert!(!parse_question_completion(s).contains('\n'));
    }
});
