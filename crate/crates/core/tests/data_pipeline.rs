use std::collections::HashSet;

use lvnet::data::{
    augment_d4, augment_dataset, batch_order, batches, d4_apply, load_dataset, load_dataset_dirs, load_mask_png, read_saliency_png,
    render_scene, resize, split, synth_generate, synth_generate_with, synth_scene, write_dataset, write_saliency_png, BatchMode,
    Dataset, Provenance, Sample, Split, SynthManifest, SynthOptions, D4,
};
use lvnet::{Error, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_sample(rng: &mut impl Rng, id: &str, h: usize, w: usize) -> Sample {
    let image = Tensor::from_fn(vec![1, h, w, 3], |_| rng.gen_range(0.0f32..1.0));
    let mask = Tensor::from_fn(vec![1, h, w, 1], |_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 });
    Sample::new(id, image, mask).unwrap()
}

fn dataset(n: usize, size: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n).map(|i| random_sample(&mut rng, &format!("s{i:04}"), size, size)).collect();
    Dataset::new(samples, Split::All, Provenance::Derived("test".into())).unwrap()
}

/// Source pixel for output `(y, x)` of an `n`-square image: clockwise
/// quarter turns, with the mirror applied before rotating.
fn d4_source(op: D4, n: usize, y: usize, x: usize) -> (usize, usize) {
    let (flip, turns) = match op {
        D4::Id => (false, 0),
        D4::Rot90 => (false, 1),
        D4::Rot180 => (false, 2),
        D4::Rot270 => (false, 3),
        D4::Flip => (true, 0),
        D4::FlipRot90 => (true, 1),
        D4::FlipRot180 => (true, 2),
        D4::FlipRot270 => (true, 3),
    };
    let (mut sy, mut sx) = (y, x);
    for _ in 0..turns {
        // Undo one clockwise turn.
        (sy, sx) = (n - 1 - sx, sy);
    }
    if flip {
        sx = n - 1 - sx;
    }
    (sy, sx)
}

#[test]
fn d4_matches_index_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 5;
    let t = Tensor::from_fn(vec![1, n, n, 2], |_| rng.gen_range(0.0f32..1.0));
    for op in D4::ALL {
        let out = d4_apply(&t, op).unwrap();
        for y in 0..n {
            for x in 0..n {
                let (sy, sx) = d4_source(op, n, y, x);
                for c in 0..2 {
                    assert_eq!(out.at(0, y, x, c), t.at(0, sy, sx, c), "{} at ({y},{x})", op.name());
                }
            }
        }
    }
}

#[test]
fn d4_orbit_is_eight_distinct_transforms() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s = random_sample(&mut rng, "a", 6, 6);
    let orbit = augment_d4(&s).unwrap();
    assert_eq!(orbit.len(), 8);
    let ids: HashSet<_> = orbit.iter().map(|o| o.id.clone()).collect();
    assert_eq!(ids.len(), 8);
    assert!(ids.contains("a_id") && ids.contains("a_flip_rot270"));
    let images: HashSet<Vec<u32>> = orbit.iter().map(|o| o.image.data().iter().map(|v| v.to_bits()).collect()).collect();
    assert_eq!(images.len(), 8);
    let sorted = |t: &Tensor<f32>| {
        let mut v: Vec<u32> = t.data().iter().map(|v| v.to_bits()).collect();
        v.sort_unstable();
        v
    };
    for o in &orbit {
        assert_eq!(sorted(&o.image), sorted(&s.image));
        assert_eq!(sorted(&o.mask), sorted(&s.mask));
    }
}

#[test]
fn constant_image_orbit_is_identical_tensors() {
    let s = Sample::new("c", Tensor::full(vec![1, 4, 4, 3], 0.25), Tensor::zeros(vec![1, 4, 4, 1])).unwrap();
    let orbit = augment_d4(&s).unwrap();
    assert!(orbit.iter().all(|o| o.image == s.image && o.mask == s.mask));
    assert_eq!(orbit.iter().map(|o| &o.id).collect::<HashSet<_>>().len(), 8);
}

#[test]
fn rotating_four_times_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t = Tensor::from_fn(vec![1, 7, 7, 3], |_| rng.gen_range(0.0f32..1.0));
    let mut r = t.clone();
    for _ in 0..4 {
        r = d4_apply(&r, D4::Rot90).unwrap();
    }
    assert_eq!(r, t);
    let f = d4_apply(&d4_apply(&t, D4::Flip).unwrap(), D4::Flip).unwrap();
    assert_eq!(f, t);
}

#[test]
fn non_square_augmentation_is_a_config_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let s = random_sample(&mut rng, "r", 4, 6);
    assert!(matches!(augment_d4(&s), Err(Error::Config(_))));
}

#[test]
fn six_hundred_samples_augment_to_4800() {
    let data = dataset(600, 8, 5);
    let aug = augment_dataset(&data).unwrap();
    assert_eq!(aug.len(), 4800);
    assert_eq!(aug.ids().into_iter().collect::<HashSet<_>>().len(), 4800);
}

#[test]
fn augmentation_commutes_with_mask_transform_after_resize() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let s = random_sample(&mut rng, "x", 23, 31);
    let r = resize(&s, (16, 16));
    for (op, o) in D4::ALL.iter().zip(augment_d4(&r).unwrap()) {
        assert_eq!(o.mask, d4_apply(&r.mask, *op).unwrap());
        assert_eq!(o.image, d4_apply(&r.image, *op).unwrap());
    }
}

#[test]
fn resize_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let s = random_sample(&mut rng, "big", 987, 1264);
    let r = resize(&s, (128, 128));
    assert_eq!(r.dims(), (128, 128));
    assert_eq!(r.source_dims, (987, 1264));
    assert!(r.mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
    assert!(r.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));

    let same = random_sample(&mut rng, "same", 128, 128);
    assert_eq!(resize(&same, (128, 128)), same);

    let ones = Sample::new("ones", Tensor::zeros(vec![1, 37, 53, 3]), Tensor::full(vec![1, 37, 53, 1], 1.0)).unwrap();
    assert!(resize(&ones, (128, 128)).mask.data().iter().all(|&v| v == 1.0));
}

proptest! {
    #[test]
    fn resized_masks_stay_binary(h in 1usize..40, w in 1usize..40, oh in 1usize..40, ow in 1usize..40, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = resize(&random_sample(&mut rng, "p", h, w), (oh, ow));
        prop_assert_eq!(r.dims(), (oh, ow));
        prop_assert!(r.mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn split_is_a_partition(n in 1usize..60, frac in 0.0f64..=1.0, seed in any::<u64>()) {
        let data = dataset(n, 2, 1);
        let k = (n as f64 * frac) as usize;
        let (a, b) = split(&data, k, seed).unwrap();
        prop_assert_eq!((a.len(), b.len()), (k, n - k));
        let ids: HashSet<&str> = a.ids().into_iter().chain(b.ids()).collect();
        prop_assert_eq!(ids, data.ids().into_iter().collect::<HashSet<_>>());
    }

    #[test]
    fn eval_batches_cover_every_index_once(len in 1usize..100, bs in 1usize..20) {
        let order = batch_order(len, bs, 0, 0, BatchMode::Eval);
        let flat: Vec<usize> = order.concat();
        prop_assert_eq!(flat, (0..len).collect::<Vec<_>>());
        let train = batch_order(len, bs, 3, 1, BatchMode::Train);
        prop_assert_eq!(train.len(), len / bs);
        prop_assert!(train.iter().all(|b| b.len() == bs));
        let seen: HashSet<usize> = train.concat().into_iter().collect();
        prop_assert_eq!(seen.len(), (len / bs) * bs);
    }
}

#[test]
fn split_examples() {
    let data = dataset(800, 2, 8);
    let (train, test) = split(&data, 600, 1).unwrap();
    assert_eq!((train.len(), test.len()), (600, 200));
    let (again, _) = split(&data, 600, 1).unwrap();
    assert_eq!(train.ids(), again.ids());
    let (other, _) = split(&data, 600, 2).unwrap();
    assert_ne!(train.ids(), other.ids());
    assert!(matches!(split(&data, 801, 1), Err(Error::Config(_))));
}

#[test]
fn batch_counts() {
    assert_eq!(batch_order(4800, 16, 0, 0, BatchMode::Train).len(), 300);
    let eval = batch_order(200, 16, 0, 0, BatchMode::Eval);
    assert_eq!(eval.len(), 13);
    assert_eq!(eval.last().unwrap().len(), 8);
    assert_eq!(batch_order(50, 8, 4, 2, BatchMode::Train), batch_order(50, 8, 4, 2, BatchMode::Train));
    assert_ne!(batch_order(50, 8, 4, 2, BatchMode::Train), batch_order(50, 8, 4, 3, BatchMode::Train));

    let data = dataset(10, 4, 9);
    let stacked: Vec<_> = batches(&data, 4, 0, 0, BatchMode::Eval).collect::<Result<_, _>>().unwrap();
    assert_eq!(stacked.len(), 3);
    assert_eq!(stacked[0].images.shape(), &[4, 4, 4, 3]);
    assert_eq!(stacked[2].masks.shape(), &[2, 4, 4, 1]);
    assert_eq!(&stacked[0].images.data()[..48], data.samples[0].image.data());
}

#[test]
fn synthetic_generation_is_deterministic_with_exact_empty_count() {
    let a = synth_generate(8, 32, 11).unwrap();
    let b = synth_generate(8, 32, 11).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, synth_generate(8, 32, 12).unwrap());

    let d = synth_generate(100, 16, 3).unwrap();
    assert_eq!(d.samples.iter().filter(|s| s.is_empty_gt()).count(), 10);
    let none = synth_generate_with(20, 16, 3, &SynthOptions { empty_fraction: 0.0, ..SynthOptions::default() }).unwrap();
    assert!(none.samples.iter().all(|s| !s.is_empty_gt()));
    for s in &d.samples {
        assert!(s.mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(s.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
    assert!(matches!(synth_generate(0, 16, 0), Err(Error::Config(_))));
}

#[test]
fn synthetic_masks_match_drawn_objects() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for i in 0..20 {
        let scene = synth_scene(&mut rng, 24, i % 7 == 0, 4);
        assert!(scene.objects.len() <= 4);
        let (image, mask) = render_scene(&scene);
        for y in 0..24 {
            for x in 0..24 {
                let covered = scene.objects.iter().any(|o| o.covers(y, x));
                assert_eq!(mask.at(0, y, x, 0) == 1.0, covered);
                // The topmost covering object paints the pixel with its colour.
                if let Some(o) = scene.objects.iter().rev().find(|o| o.covers(y, x)) {
                    for c in 0..3 {
                        assert_eq!(image.at(0, y, x, c), o.color[c]);
                    }
                }
            }
        }
    }
}

#[test]
fn write_then_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_generate(6, 16, 2).unwrap();
    write_dataset(&data, dir.path()).unwrap();
    let manifest: SynthManifest = serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!((manifest.seed, manifest.n, manifest.size), (2, 6, 16));

    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.ids(), data.ids());
    for (a, b) in back.samples.iter().zip(&data.samples) {
        assert_eq!(a.mask, b.mask);
        assert!(a.image.data().iter().zip(b.image.data()).all(|(x, y)| (x - y).abs() <= 0.5 / 255.0 + 1e-6));
    }
}

#[test]
fn loader_errors_name_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_generate(3, 8, 2).unwrap();
    write_dataset(&data, dir.path()).unwrap();
    std::fs::remove_file(dir.path().join("GT").join("synth_0001.png")).unwrap();
    let err = load_dataset(dir.path()).unwrap_err();
    assert!(matches!(err, Error::Data(_)) && err.to_string().contains("synth_0001"), "{err}");

    let empty = tempfile::tempdir().unwrap();
    std::fs::create_dir(empty.path().join("images")).unwrap();
    std::fs::create_dir(empty.path().join("GT")).unwrap();
    assert!(matches!(load_dataset(empty.path()), Err(Error::Data(_))));

    let err = load_dataset_dirs(dir.path().join("images"), dir.path().join("nope")).unwrap_err();
    assert!(err.to_string().contains("nope"), "{err}");
}

#[test]
fn grey_masks_binarise_on_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.png");
    let pixels: Vec<u8> = vec![0, 255, 127, 128, 255, 0];
    image::GrayImage::from_raw(3, 2, pixels).unwrap().save(&path).unwrap();
    let m = load_mask_png(&path).unwrap();
    assert_eq!(m.data(), &[0.0, 1.0, 0.0, 1.0, 1.0, 0.0]);

    let map = Tensor::new(vec![1, 1, 3, 1], vec![0.0f32, 0.5, 1.0]).unwrap();
    let p = dir.path().join("s.png");
    write_saliency_png(&p, &map).unwrap();
    let back = read_saliency_png(&p).unwrap();
    assert!(back.data().iter().zip(map.data()).all(|(a, b)| (a - b).abs() <= 0.5 / 255.0 + 1e-6));
}
