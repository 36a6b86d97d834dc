#![no_main]

use libfuzzer_sys::fuzz_target;
use nbkv_service::shard_file::{decode_shard, ShardHeader};

fuzz_target!(|data: &[u8]| {
    let _ = ShardHeader::decode(data);
    if let Ok((header, records)) = decode_shard(data) {
        let mut again = header.encode().to_vec();
        for (k, v) in &records {
            again.extend_from_slice(&k.to_le_bytes());
            again.extend_from_slice(&(v.len() as u32).to_le_bytes());
            again.extend_from_slice(v);
        }
        assert_eq!(again, data);
    }
});
