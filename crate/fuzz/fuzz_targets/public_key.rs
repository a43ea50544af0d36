#![no_main]
use blisslab::bliss::decode_public_key;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = decode_public_key(data);
});
