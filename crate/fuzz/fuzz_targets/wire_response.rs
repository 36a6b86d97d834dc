#![no_main]

use libfuzzer_sys::fuzz_target;
use nbkv_service::wire::{decode_response, encode_response};

// First two bytes: the key count the caller expects. Rest: the body.
fuzz_target!(|data: &[u8]| {
    let Some((n, body)) = data.split_first_chunk::<2>() else { return };
    let key_count = u16::from_le_bytes(*n) as usize;
    if let Ok(resp) = decode_response(body, key_count) {
        let mut again = Vec::new();
        encode_response(&resp, &mut again);
        assert_eq!(again, body);
    }
});
