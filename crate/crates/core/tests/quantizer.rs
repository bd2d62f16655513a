use nalgebra::DVector;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qgadmm::quantizer::{
    self, decode, encode, from_bytes, payload_bits, select_bits, step_size, to_bytes, Accounting, MAX_BITS,
};

fn vectors(max_dim: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1..=max_dim).prop_flat_map(|d| {
        (
            prop::collection::vec(-1e3..1e3f64, d),
            prop::collection::vec(-1e3..1e3f64, d),
        )
    })
}

proptest! {
    #[test]
    fn decoded_value_is_a_neighbouring_grid_point((x, hat) in vectors(8), bits in 1u32..=16, seed: u64) {
        let x = DVector::from_vec(x);
        let hat = DVector::from_vec(hat);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = encode(&x, &hat, bits, &mut rng).unwrap();
        let decoded = decode(&e.message, &hat).unwrap();
        prop_assert_eq!(&decoded, &e.new_hat);
        let range = f64::from(e.message.range);
        let delta = 2.0 * range / ((1u64 << bits) - 1) as f64;
        for i in 0..x.len() {
            prop_assert!((x[i] - decoded[i]).abs() <= delta);
            prop_assert_eq!(decoded[i], hat[i] + delta * e.message.levels[i] as f64 - range);
        }
    }

    #[test]
    fn same_seed_same_message((x, hat) in vectors(6), bits in 1u32..=8, seed: u64) {
        let x = DVector::from_vec(x);
        let hat = DVector::from_vec(hat);
        let a = encode(&x, &hat, bits, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = encode(&x, &hat, bits, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(a.message, b.message);
        prop_assert_eq!(a.new_hat, b.new_hat);
    }

    #[test]
    fn bytes_round_trip_within_a_byte_of_full_payload((x, hat) in vectors(12), bits in 1u32..=20, seed: u64) {
        let x = DVector::from_vec(x);
        let hat = DVector::from_vec(hat);
        let d = x.len();
        let e = encode(&x, &hat, bits, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let bytes = to_bytes(&e.message);
        let full = payload_bits(&e.message, d, Accounting::Full).div_ceil(8);
        // The flags byte pads the single zero-difference bit.
        prop_assert!((full..=full + 1).contains(&(bytes.len() as u64)));
        prop_assert_eq!(from_bytes(&bytes, d).unwrap(), e.message);
    }

    #[test]
    fn selected_width_never_grows_the_step(b_prev in 1u32..=24, r_prev in 1e-6..1e3f64, r_cur in 1e-6..1e3f64) {
        let b = select_bits(b_prev, r_prev, r_cur).unwrap();
        prop_assume!(b < MAX_BITS);
        prop_assert!(step_size(b, r_cur).unwrap() <= step_size(b_prev, r_prev).unwrap());
        // Minimal: one bit fewer would break the bound.
        if b > 1 {
            prop_assert!(step_size(b - 1, r_cur).unwrap() > step_size(b_prev, r_prev).unwrap());
        }
    }

    #[test]
    fn quantized_payload_beats_full_precision_below_threshold(bits in 1u32..32, d in 1usize..256) {
        let msg = quantizer::QuantizedMessage { bits, range: 1.0, levels: vec![0; d], zero_diff: false };
        let cheaper = payload_bits(&msg, d, Accounting::Experiment) < quantizer::full_precision_bits(d);
        prop_assert_eq!(cheaper, (bits as f64) < 32.0 - 32.0 / d as f64);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn mean_squared_error_within_quarter_step((x, hat) in vectors(4), bits in 1u32..=8, seed: u64) {
        let x = DVector::from_vec(x);
        let hat = DVector::from_vec(hat);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = 20_000;
        let mut sq = 0.0;
        let mut delta = 0.0;
        for _ in 0..m {
            let e = encode(&x, &hat, bits, &mut rng).unwrap();
            delta = e.diagnostics.step_size;
            sq += (&x - &e.new_hat).norm_squared();
        }
        prop_assert!(sq / m as f64 <= x.len() as f64 * delta * delta / 4.0 * 1.05);
    }
}

#[test]
fn two_bit_payload_at_six_dimensions() {
    let msg = quantizer::QuantizedMessage {
        bits: 2,
        range: 1.0,
        levels: vec![0; 6],
        zero_diff: false,
    };
    assert_eq!(payload_bits(&msg, 6, Accounting::Experiment), 44);
    assert_eq!(quantizer::full_precision_bits(6), 192);
}
