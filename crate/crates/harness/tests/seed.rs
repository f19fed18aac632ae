use harness::seed::{mix, snr_key, stream_rng, Stream};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn streams_are_separated() {
    let draw = |s: Stream, idx: &[u64]| stream_rng(1, s, idx).random::<u64>();
    assert_ne!(draw(Stream::Channel, &[0]), draw(Stream::PilotNoise, &[0]));
    assert_ne!(draw(Stream::DataNoise, &[1, 2, 0]), draw(Stream::DataNoise, &[1, 2, 1]));
    assert_eq!(draw(Stream::DataBits, &[snr_key(10.0), 3]), draw(Stream::DataBits, &[snr_key(10.0), 3]));
    assert_ne!(snr_key(0.0), snr_key(-0.0));
}

proptest! {
    #[test]
    fn mix_is_order_sensitive(a in any::<u64>(), b in any::<u64>()) {
        prop_assume!(a != b);
        prop_assert_ne!(mix(&[a, b]), mix(&[b, a]));
        prop_assert_eq!(mix(&[a, b]), mix(&[a, b]));
    }
}
