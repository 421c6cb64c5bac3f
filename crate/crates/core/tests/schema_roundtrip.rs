mod common;

use chakra_core::schema::{decode_trace, detect_format, encode_trace, Format};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn valid_traces_survive_both_encodings(seed in any::<u64>()) {
        let trace = common::random_valid_trace(&mut ChaCha8Rng::seed_from_u64(seed), 200);
        prop_assert!(trace.validate().is_valid(), "{}", trace.validate());
        for format in [Format::Json, Format::Binary] {
            let bytes = encode_trace(&trace, format).unwrap();
            prop_assert_eq!(detect_format(&bytes), format);
            prop_assert_eq!(&decode_trace(&bytes, format).unwrap(), &trace);
        }
    }

    #[test]
    fn truncated_binary_is_an_error(seed in any::<u64>(), cut in 0.0f64..1.0) {
        let trace = common::random_valid_trace(&mut ChaCha8Rng::seed_from_u64(seed), 30);
        let bytes = encode_trace(&trace, Format::Binary).unwrap();
        let n = (bytes.len() as f64 * cut) as usize;
        prop_assert!(decode_trace(&bytes[..n], Format::Binary).is_err());
    }

    #[test]
    fn corrupted_bytes_never_panic(seed in any::<u64>(), flips in proptest::collection::vec((any::<usize>(), any::<u8>()), 1..8)) {
        let trace = common::random_valid_trace(&mut ChaCha8Rng::seed_from_u64(seed), 30);
        for format in [Format::Json, Format::Binary] {
            let mut bytes = encode_trace(&trace, format).unwrap();
            for &(i, b) in &flips {
                let len = bytes.len();
                bytes[i % len] ^= b;
            }
            let _ = decode_trace(&bytes, format);
        }
    }
}
