use std::path::{Path, PathBuf};

use attrgen::dataset::{
    apply_eye_occlusion, build_pairs, decode_pgm, encode_pgm, manifest_to_string, parse_manifest, ManifestEntry, Split,
};
use attrgen::evaluation::{euclidean, l2_normalize, rank};
use attrgen::models::{build_stage1_with, Checkpoint, Network, Stage1Options};
use attrgen::nn::{concat_channels, conv2d_forward, split_channels, LayerParams, ParamKind};
use attrgen::{Image, NormStats, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tensor(h: usize, w: usize, c: usize) -> impl Strategy<Value = Tensor<f64>> {
    prop::collection::vec(-3.0f64..3.0, h * w * c).prop_map(move |d| Tensor::new(&[h, w, c], d).unwrap())
}

fn conv_case() -> impl Strategy<Value = (Tensor<f64>, Tensor<f64>, Tensor<f64>, f64, f64)> {
    (1usize..6, 1usize..6, 1usize..4, 1usize..4).prop_flat_map(|(h, w, ci, co)| {
        (
            tensor(h, w, ci),
            tensor(h, w, ci),
            prop::collection::vec(-1.0f64..1.0, 9 * ci * co).prop_map(move |d| Tensor::new(&[3, 3, ci, co], d).unwrap()),
            -2.0f64..2.0,
            -2.0f64..2.0,
        )
    })
}

fn manifest_case() -> impl Strategy<Value = Vec<ManifestEntry>> {
    prop::collection::btree_set((0u32..6, 0u32..3, 0usize..7), 0..40).prop_map(|keys| {
        keys.into_iter()
            .map(|(id, il, a)| ManifestEntry {
                image_path: PathBuf::from(format!("img/{id}_{il}_{a}.pgm")),
                identity: id,
                attribute_id: a,
                illumination_id: Some(il),
                split: if id % 3 == 0 { Split::Test } else { Split::Train },
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn convolution_is_linear_without_bias((x, y, w, a, b) in conv_case()) {
        let co = w.shape()[3];
        let p = LayerParams::new(ParamKind::Conv3x3, w, vec![0.0; co]).unwrap();
        let mix = Tensor::new(x.shape(), x.data().iter().zip(y.data()).map(|(u, v)| a * u + b * v).collect()).unwrap();
        let lhs = conv2d_forward(&mix, &p).unwrap();
        let (cx, cy) = (conv2d_forward(&x, &p).unwrap(), conv2d_forward(&y, &p).unwrap());
        for ((l, u), v) in lhs.data().iter().zip(cx.data()).zip(cy.data()) {
            prop_assert!((l - (a * u + b * v)).abs() < 1e-9);
        }
    }

    #[test]
    fn split_inverts_concat((h, w, ca, cb) in (1usize..5, 1usize..5, 1usize..4, 1usize..4), seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let a = Tensor::<f64>::from_fn(&[h, w, ca], |_| rand::Rng::random(&mut r)).unwrap();
        let b = Tensor::<f64>::from_fn(&[h, w, cb], |_| rand::Rng::random(&mut r)).unwrap();
        let joined = concat_channels(&a, &b).unwrap();
        prop_assert_eq!(joined.shape(), &[h, w, ca + cb][..]);
        let (a2, b2) = split_channels(&joined, ca).unwrap();
        prop_assert_eq!(a2, a);
        prop_assert_eq!(b2, b);
    }

    #[test]
    fn pgm_roundtrip(w in 1usize..20, h in 1usize..20, seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let px: Vec<u8> = (0..w * h).map(|_| rand::Rng::random(&mut r)).collect();
        let bytes = encode_pgm(w, h, &px).unwrap();
        prop_assert_eq!(decode_pgm(&bytes).unwrap(), (w, h, px));
    }

    #[test]
    fn normalize_roundtrip(px in prop::collection::vec(any::<u8>(), 16), mean in 0.0f64..255.0, std in 0.5f64..120.0) {
        let img = Image::from_bytes(4, 4, &px).unwrap();
        let stats = NormStats::new(mean, std).unwrap();
        let back = img.normalize(&stats).unwrap().denormalize(&stats).unwrap();
        prop_assert_eq!(back.to_bytes().unwrap(), px);
        for (a, b) in back.pixels().iter().zip(img.pixels()) {
            prop_assert!((a - b).abs() <= f32::EPSILON as f64 * b.abs().max(1.0));
        }
    }

    #[test]
    fn occlusion_blacks_out_exactly_the_bar(px in prop::collection::vec(1u8..=255, 64), top in 0usize..8, height in 1usize..8) {
        let img = Image::from_bytes(8, 8, &px).unwrap();
        match apply_eye_occlusion(&img, top, height) {
            Ok(out) => {
                prop_assert!(top + height <= 8);
                for r in 0..8 {
                    for c in 0..8 {
                        let expect = if (top..top + height).contains(&r) { 0.0 } else { img.get(r, c) };
                        prop_assert_eq!(out.get(r, c), expect);
                    }
                }
            }
            Err(_) => prop_assert!(top + height > 8),
        }
    }

    #[test]
    fn manifest_text_roundtrip(entries in manifest_case()) {
        let text = manifest_to_string(&entries).unwrap();
        prop_assert_eq!(parse_manifest(Path::new("m.csv"), text.as_bytes(), 7).unwrap(), entries);
    }

    #[test]
    fn pair_count_matches_group_sizes(entries in manifest_case()) {
        let mut groups = std::collections::BTreeMap::<(u32, Option<u32>), usize>::new();
        for e in &entries {
            *groups.entry((e.identity, e.illumination_id)).or_default() += 1;
        }
        let expected: usize = groups.values().map(|&n| n * n.saturating_sub(1)).sum();
        let pairs = build_pairs(&entries);
        prop_assert_eq!(pairs.len(), expected);
        for p in pairs {
            let (s, t) = (&entries[p.source], &entries[p.target]);
            prop_assert_eq!((s.identity, s.illumination_id), (t.identity, t.illumination_id));
            prop_assert_ne!(s.attribute_id, t.attribute_id);
        }
    }

    #[test]
    fn normalized_vectors_have_unit_length(v in prop::collection::vec(-100.0f64..100.0, 1..30)) {
        let n = l2_normalize(&v);
        let len = n.iter().map(|x| x * x).sum::<f64>().sqrt();
        if v.iter().any(|&x| x != 0.0) {
            prop_assert!((len - 1.0).abs() < 1e-12);
        } else {
            prop_assert_eq!(n, v);
        }
    }

    #[test]
    fn ranking_is_sorted_and_complete(q in prop::collection::vec(-1.0f64..1.0, 3), feats in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 1..25)) {
        let ranked = rank(&q, &feats, 0..feats.len());
        prop_assert_eq!(ranked.len(), feats.len());
        for w in ranked.windows(2) {
            prop_assert!(w[0].1 < w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0));
        }
        for &(i, d) in &ranked {
            prop_assert_eq!(d, euclidean(&q, &feats[i]));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 100, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn checkpoint_bytes_roundtrip(seed in any::<u64>(), iteration in any::<u64>(), mean in 0.0f64..255.0) {
        let spec = build_stage1_with(Stage1Options { input_size: 4, attribute_map_channels: 1, ..Stage1Options::default() }).unwrap();
        let mut ck = Checkpoint::new(
            Network::init(spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap(),
            NormStats::new(mean, 10.0).unwrap(),
            seed,
        );
        ck.iteration = iteration;
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(back, ck);
    }
}
