#![no_main]

use libfuzzer_sys::fuzz_target;
use partial_rl::mdp::Action;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(a) = text.parse::<Action>() {
            assert_eq!(a.token().parse::<Action>().unwrap(), a);
        }
    }
});
