#![no_main]
use blisslab::bliss::{decode_signature, encode_signature};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(sig) = decode_signature(data) {
        assert_eq!(decode_signature(&encode_signature(&sig)).unwrap(), sig);
    }
});
