//! Every decoder must reject damaged input with an error, never a panic.
//! Stable-toolchain counterpart of the targets under fuzz/.

use blisslab::bliss::{
    decode_public_key, decode_secret_key, decode_signature, decode_signed_corpus,
    encode_public_key, encode_secret_key, encode_signature, encode_signed_corpus, keygen, sign,
    BlissParams, SignedMessage,
};
use blisslab::leakage::{decode_archive, encode_archive};
use blisslab::learn::{decode_model, encode_model, ClassifierModel, Network, NormStats};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Runs `decode` on every truncation of `valid` and on random byte edits.
fn hammer(name: &str, valid: &[u8], decode: impl Fn(&[u8]) -> bool) {
    assert!(decode(valid), "{name}: valid input rejected");
    for len in 0..valid.len() {
        assert!(
            !decode(&valid[..len]),
            "{name}: truncation to {len} accepted"
        );
    }
    let mut r = ChaCha20Rng::seed_from_u64(valid.len() as u64);
    for _ in 0..50_000 {
        let mut data = valid.to_vec();
        for _ in 0..r.random_range(1..4) {
            let i = r.random_range(0..data.len());
            data[i] = match r.random_range(0..3) {
                0 => r.random(),
                1 => data[i] ^ (1 << r.random_range(0..8)),
                _ => 0xff,
            };
        }
        decode(&data);
    }
}

#[test]
fn decoders_survive_damaged_input() {
    let params = BlissParams::toy64();
    let mut r = ChaCha20Rng::seed_from_u64(11);
    let keys = keygen(&params, &mut r).unwrap();
    let entries: Vec<SignedMessage> = (0..3u8)
        .map(|i| SignedMessage {
            message: vec![i; 5],
            signature: sign(&[i; 5], &keys, &params, &mut r).unwrap().0,
        })
        .collect();

    hammer("public key", &encode_public_key(&keys.pk, params.d), |d| {
        decode_public_key(d).is_ok()
    });
    hammer("secret key", &encode_secret_key(&keys, params.d), |d| {
        decode_secret_key(d).is_ok()
    });
    hammer("signature", &encode_signature(&entries[0].signature), |d| {
        decode_signature(d).is_ok()
    });
    hammer(
        "signed corpus",
        &encode_signed_corpus(&entries, params.ring.q(), params.d),
        |d| decode_signed_corpus(d).is_ok(),
    );

    let golden = std::fs::read(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/tests/data/golden-cdt-x.sctr"
    ))
    .unwrap();
    hammer("trace archive", &golden, |d| match decode_archive(d) {
        Ok(a) => {
            assert_eq!(encode_archive(&a).unwrap(), d);
            true
        }
        Err(_) => false,
    });

    let model = ClassifierModel {
        net: Network::new(6, &[4], 2, &mut r),
        stats: NormStats {
            mean: vec![0.0; 6],
            std: vec![1.0; 6],
        },
        threshold: 0.5,
    };
    hammer("model", &encode_model(&model), |d| decode_model(d).is_ok());
}
