mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use signcast_net::protocol::{decode, encode, Message};

#[test]
fn two_thousand_random_messages_round_trip() {
    let failures = common::round_trip_failures(2000, 7);
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn malformed_payloads_yield_designated_errors() {
    let bad = common::malformed_mismatches();
    assert!(bad.is_empty(), "{bad:#?}");
}

#[test]
fn every_type_appears_in_the_generator() {
    let mut rng = common::rng(1);
    let tags: std::collections::HashSet<_> = (0..500)
        .map(|_| common::random_message(&mut rng).type_tag())
        .collect();
    assert_eq!(tags.len(), 9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn round_trip_is_lossless(seed in any::<u64>()) {
        let msg = common::random_message(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let text = encode(&msg).unwrap();
        prop_assert!(!text.contains('\n'));
        prop_assert_eq!(decode(&text).unwrap(), msg);
    }

    #[test]
    fn re_encoding_is_stable(seed in any::<u64>()) {
        let msg = common::random_message(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let once = encode(&msg).unwrap();
        prop_assert_eq!(encode(&decode(&once).unwrap()).unwrap(), once);
    }

    #[test]
    fn arbitrary_text_never_panics(s in ".{0,64}") {
        let _ = decode(&s);
    }

    #[test]
    fn confidence_outside_unit_interval_is_rejected(c in prop_oneof![-1e6..-1e-9f64, 1.0 + 1e-9..1e6f64]) {
        let payload = format!(r#"{{"type":"caption","word":"w","confidence":{c},"seq":1,"ts_ms":0}}"#);
        prop_assert_eq!(
            decode(&payload),
            Err(signcast_net::ProtocolError::OutOfRange("confidence"))
        );
    }
}

#[test]
fn unknown_fields_are_ignored() {
    let m = decode(r#"{"type":"ping","extra":[1,2,3]}"#).unwrap();
    assert_eq!(m, Message::Ping);
}
