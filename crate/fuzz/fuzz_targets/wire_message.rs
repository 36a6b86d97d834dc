#![no_main]

use libfuzzer_sys::fuzz_target;
use nbkv_service::wire::{decode_message, Message};

fuzz_target!(|data: &[u8]| {
    if let Ok(Message::Response(body)) = decode_message(data) {
        assert_eq!(body, data);
    }
});
