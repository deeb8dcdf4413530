#![no_main]

use libfuzzer_sys::fuzz_target;
use partial_rl::approximator::{decode_checkpoint, write_checkpoint};

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = decode_checkpoint(data) {
        let mut bytes = Vec::new();
        write_checkpoint(&ckpt, &mut bytes).unwrap();
        let again = decode_checkpoint(&bytes).unwrap();
        assert_eq!(again.epoch, ckpt.epoch);
        assert_eq!(again.network.config(), ckpt.network.config());
    }
});
