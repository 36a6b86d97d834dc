#![no_main]

use libfuzzer_sys::fuzz_target;
use nbkv_service::server::Health;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(h) = Health::parse(text) {
        let canonical = h.to_text();
        let again = Health::parse(&canonical).expect("canonical text parses");
        assert_eq!(again.to_text(), canonical);
    }
});
