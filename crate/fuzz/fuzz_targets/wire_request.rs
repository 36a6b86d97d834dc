#![no_main]

use libfuzzer_sys::fuzz_target;
use nbkv_service::wire::{decode_request, encode_request};

fuzz_target!(|data: &[u8]| {
    if let Ok(req) = decode_request(data) {
        let mut again = Vec::new();
        encode_request(&req, &mut again);
        assert_eq!(again, data);
    }
});
