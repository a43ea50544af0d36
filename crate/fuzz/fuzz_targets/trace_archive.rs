#![no_main]
use blisslab::leakage::{decode_archive, encode_archive};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(archive) = decode_archive(data) {
        // Anything that decodes is canonical.
        assert_eq!(encode_archive(&archive).unwrap(), data);
    }
});
