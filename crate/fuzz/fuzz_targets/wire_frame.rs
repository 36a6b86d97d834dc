#![no_main]

use libfuzzer_sys::fuzz_target;
use nbkv_service::wire::split_frame;

fuzz_target!(|data: &[u8]| {
    let mut rest = data;
    while let Ok(Some((body, used))) = split_frame(rest) {
        assert!(used >= 4 + body.len() && used <= rest.len());
        rest = &rest[used..];
    }
});
