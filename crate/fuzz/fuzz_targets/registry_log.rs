#![no_main]

use libfuzzer_sys::fuzz_target;
use nbkv_service::registry::{parse_registry, Event};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(Some(e)) = text.lines().next().map(Event::parse_line).transpose() {
        assert_eq!(Event::parse_line(&e.to_line()).as_ref(), Ok(&e));
    }
    if let Ok(events) = parse_registry(text) {
        for (i, e) in events.iter().enumerate() {
            assert_eq!(e.revision, i as u64 + 1);
        }
    }
});
