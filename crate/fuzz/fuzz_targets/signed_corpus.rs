#![no_main]
use blisslab::bliss::decode_signed_corpus;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = decode_signed_corpus(data);
});
