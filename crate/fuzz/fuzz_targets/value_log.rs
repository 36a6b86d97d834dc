#![no_main]

use libfuzzer_sys::fuzz_target;
use nbkv_core::tiered::{decode_log, decode_record, encode_header, encode_record};

fuzz_target!(|data: &[u8]| {
    if let Ok(r) = decode_record(data) {
        assert!(r.encoded_len() <= data.len());
    }
    if let Ok(records) = decode_log(data) {
        let mut again = encode_header().to_vec();
        for (off, r) in &records {
            assert_eq!(*off as usize, again.len());
            encode_record(r.key, r.value, &mut again);
        }
        assert_eq!(again, data);
    }
});
