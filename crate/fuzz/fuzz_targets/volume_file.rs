#![no_main]

use libfuzzer_sys::fuzz_target;
use partial_rl::volume::{decode_volume, write_volume};

fuzz_target!(|data: &[u8]| {
    if let Ok(v) = decode_volume(data) {
        // Anything accepted must survive a round trip unchanged.
        let mut bytes = Vec::new();
        write_volume(&v, &mut bytes).unwrap();
        assert_eq!(decode_volume(&bytes).unwrap(), v);
    }
});
