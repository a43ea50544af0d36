#![no_main]
use blisslab::learn::{decode_model, encode_model};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = decode_model(data) {
        let again = decode_model(&encode_model(&model)).expect("re-encoded model decodes");
        assert_eq!(again.classes(), model.classes());
        assert_eq!(again.input_dim(), model.input_dim());
    }
});
