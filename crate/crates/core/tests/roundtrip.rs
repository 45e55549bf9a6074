mod common;

use common::criteria::{self, bits};
use proptest::prelude::*;
use pseudoct::data::slice::{decode_raw, encode_raw};
use pseudoct::data::{HuWindow, RawEncoding};
use pseudoct::nn::weights::{decode, encode, WeightEntry};

#[test]
fn denoiser_weights_round_trip() {
    criteria::denoiser_weights_round_trip();
}

#[test]
fn noise_net_weights_round_trip() {
    criteria::noise_net_weights_round_trip();
}

#[test]
fn corrupt_weight_files_rejected() {
    let entries = vec![WeightEntry {
        name: "w".into(),
        dims: vec![2, 3],
        values: vec![1.0; 6],
    }];
    let bytes = encode(&entries).unwrap();
    assert!(decode(&bytes[..bytes.len() - 1]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(decode(&extra).is_err());
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(decode(&magic).is_err());
    let bad = WeightEntry {
        name: "w".into(),
        dims: vec![2, 2],
        values: vec![0.0; 3],
    };
    assert!(encode(&[bad]).is_err());
}

#[test]
fn raw_slice_file_round_trip() {
    criteria::raw_slice_file_round_trip();
}

fn entry_strategy() -> impl Strategy<Value = WeightEntry> {
    (prop::collection::vec(1usize..5, 0..4), "[a-z0-9_.]{0,12}").prop_flat_map(|(dims, name)| {
        let len = dims.iter().product::<usize>();
        prop::collection::vec(any::<u32>().prop_map(f32::from_bits), len).prop_map(move |bits| {
            WeightEntry {
                name: name.clone(),
                dims: dims.clone(),
                values: bits,
            }
        })
    })
}

proptest! {
    #[test]
    fn weight_encoding_is_lossless(entries in prop::collection::vec(entry_strategy(), 0..5)) {
        let back = decode(&encode(&entries).unwrap()).unwrap();
        prop_assert_eq!(back.len(), entries.len());
        for (a, b) in back.iter().zip(&entries) {
            prop_assert_eq!(&a.name, &b.name);
            prop_assert_eq!(&a.dims, &b.dims);
            prop_assert_eq!(bits(&a.values), bits(&b.values));
        }
    }

    #[test]
    fn in_window_raw_values_round_trip(
        slope_tenths in prop::sample::select(vec![1u32, 10]),
        h in 1usize..12,
        w in 1usize..12,
        seed in any::<u64>(),
    ) {
        let enc = RawEncoding { slope: slope_tenths as f32 / 10.0, intercept: -1024.0 };
        let win = HuWindow::default();
        let lo = enc.from_hu(win.lower());
        let hi = enc.from_hu(win.lower() + win.width);
        let raw: Vec<u8> = (0..h * w)
            .flat_map(|i| {
                let v = lo as u64 + (seed.wrapping_mul(i as u64 + 1) >> 7) % (hi - lo + 1) as u64;
                (v as u16).to_le_bytes()
            })
            .collect();
        let px = decode_raw(&raw, w, h, enc, win).unwrap();
        prop_assert_eq!(encode_raw(&px, enc, win), raw);
    }
}
