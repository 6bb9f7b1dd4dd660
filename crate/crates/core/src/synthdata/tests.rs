use super::*;
use crate::taxonomy::parse_embeddings;

fn cfg() -> SynthConfig {
    SynthConfig::default()
}

#[test]
fn same_seed_gives_identical_sample() {
    for occlusion in [false, true] {
        let c = SynthConfig { occlusion, ..cfg() };
        assert_eq!(generate_scene(9, &c).unwrap(), generate_scene(9, &c).unwrap());
    }
    assert_ne!(
        generate_scene(9, &cfg()).unwrap().image,
        generate_scene(10, &cfg()).unwrap().image
    );
}

#[test]
fn invalid_configs_are_rejected() {
    for c in [
        SynthConfig { resolution: 60, ..cfg() },
        SynthConfig { resolution: 16, ..cfg() },
        SynthConfig { max_figures: 3, ..cfg() },
        SynthConfig { noise: 1.5, ..cfg() },
    ] {
        assert!(matches!(generate_scene(1, &c), Err(Error::Config(_))), "{c:?}");
    }
}

#[test]
fn masks_are_hierarchy_consistent_over_many_seeds() {
    let tax = shipped();
    let to_coarse = hierarchy_projection(tax, "fine", "coarse").unwrap();
    let to_mid = hierarchy_projection(tax, "fine", "mid").unwrap();
    let mid_to_coarse = hierarchy_projection(tax, "mid", "coarse").unwrap();
    let c = SynthConfig { resolution: 32, occlusion: true, ..cfg() };
    for seed in 0..1000 {
        let s = generate_scene(seed, &c).unwrap();
        let fine = s.mask("fine").unwrap();
        assert_eq!(&fine.project(&to_coarse).unwrap(), s.mask("coarse").unwrap());
        assert_eq!(&fine.project(&to_mid).unwrap(), s.mask("mid").unwrap());
        assert_eq!(
            &s.mask("mid").unwrap().project(&mid_to_coarse).unwrap(),
            s.mask("coarse").unwrap()
        );
        for (id, m) in &s.masks {
            let k = tax.num_labels(id).unwrap();
            assert!(m.data.iter().all(|&v| (v as usize) < k));
        }
    }
}

#[test]
fn images_are_quantized_and_in_range() {
    let s = generate_scene(3, &cfg()).unwrap();
    assert_eq!(s.image.shape(), [64, 64, 3]);
    for &v in s.image.data() {
        assert!((0.0..=1.0).contains(&v));
        assert_eq!((v * 255.0).round() / 255.0, v);
    }
}

/// Fraction of seeds in which each label of `dataset` appears.
fn census(dataset: &str, c: &SynthConfig, seeds: u64) -> Vec<f64> {
    let k = shipped().num_labels(dataset).unwrap();
    let mut hits = vec![0u32; k];
    for seed in 0..seeds {
        let s = generate_scene(seed, c).unwrap();
        let mut seen = vec![false; k];
        for &v in &s.mask(dataset).unwrap().data {
            seen[v as usize] = true;
        }
        for (h, s) in hits.iter_mut().zip(seen) {
            *h += u32::from(s);
        }
    }
    hits.iter().map(|&h| h as f64 / seeds as f64).collect()
}

#[test]
fn every_class_appears_in_at_least_five_percent_of_scenes() {
    let c = cfg();
    for id in ["coarse", "mid", "fine"] {
        let freq = census(id, &c, 1000);
        for (label, f) in shipped().dataset(id).unwrap().labels.iter().zip(&freq) {
            assert!(*f >= 0.05, "{id}/{label}: {f}");
        }
    }
}

#[test]
fn seed_42_shows_every_coarse_class() {
    // The census gives how often a scene contains every coarse class; seed 42
    // must be one of those scenes and the rate must be high.
    let c = cfg();
    let mut complete = 0;
    for seed in 0..1000 {
        let s = generate_scene(seed, &c).unwrap();
        let mut seen = [false; 7];
        for &v in &s.mask("coarse").unwrap().data {
            seen[v as usize] = true;
        }
        complete += u32::from(seen.iter().all(|&b| b));
    }
    assert!(complete as f64 / 1000.0 >= 0.9, "{complete}");
    let s = generate_scene(42, &c).unwrap();
    let mut seen = [false; 7];
    for &v in &s.mask("coarse").unwrap().data {
        seen[v as usize] = true;
    }
    assert!(seen.iter().all(|&b| b));
}

#[test]
fn split_seeds_are_distinct() {
    let a = scene_seed(1, "train", "coarse", 0);
    assert_ne!(a, scene_seed(1, "train", "fine", 0));
    assert_ne!(a, scene_seed(1, "test", "coarse", 0));
    assert_ne!(a, scene_seed(1, "train", "coarse", 1));
}

#[test]
fn white_pixel_encodes_minimal_header() {
    let img = Tensor::full(&[1, 1, 3], 1.0f32);
    let bytes = encode_image(&img).unwrap();
    assert_eq!(bytes, b"P6\n1 1\n255\n\xff\xff\xff");
}

#[test]
fn image_round_trip_is_a_fixpoint() {
    let s = generate_scene(5, &cfg()).unwrap();
    let bytes = encode_image(&s.image).unwrap();
    let decoded = decode_image(&bytes).unwrap();
    assert_eq!(decoded, s.image);
    assert_eq!(encode_image(&decoded).unwrap(), bytes);
    // Unquantized input loses only the 8-bit rounding.
    let raw = Tensor::new(&[1, 2, 3], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.999]).unwrap();
    let once = decode_image(&encode_image(&raw).unwrap()).unwrap();
    assert!(once.max_abs_diff(&raw) <= 0.5 / 255.0 + 1e-7);
    assert_eq!(decode_image(&encode_image(&once).unwrap()).unwrap(), once);
}

#[test]
fn mask_round_trip_is_exact() {
    let data: Vec<u8> = (0..=255).collect();
    let m = LabelMask::new(16, 16, data).unwrap();
    assert_eq!(decode_mask(&encode_mask(&m)).unwrap(), m);
}

#[test]
fn codec_errors_carry_byte_offsets() {
    let offset = |r: Result<_>| match r {
        Err(Error::ParseByte { offset, .. }) => offset,
        Err(e) => panic!("{e}"),
        Ok(()) => panic!("accepted"),
    };
    let img = |b: &[u8]| decode_image(b).map(|_| ());
    assert_eq!(offset(img(b"P5\n1 1\n255\n\0")), 0);
    assert_eq!(offset(img(b"P6\n1 x\n255\n")), 5);
    assert_eq!(offset(img(b"P6\n1 1\n15\n\0\0\0")), 9);
    assert_eq!(offset(img(b"P6\n2 1\n255\n\0\0\0")), 14);
    assert_eq!(offset(img(b"P6\n1 1\n255\n\0\0\0\0")), 14);
    assert!(decode_image(b"P6 # c\n1 1 255\n\x01\x02\x03").is_ok());
    assert_eq!(offset(decode_mask(b"P5\n2 2\n255\n\0").map(|_| ())), 12);
}

#[test]
fn manifest_loading() {
    let dir = tempfile::tempdir().unwrap();
    let tax = shipped();
    for name in ["a.ppm", "a.pgm", "b.ppm", "b.pgm", "c.ppm", "c.pgm"] {
        std::fs::write(dir.path().join(name), b"x").unwrap();
    }
    let path = dir.path().join("m.tsv");
    std::fs::write(&path, "").unwrap();
    let empty = load_manifest(&path, tax).unwrap();
    assert!(empty.records.is_empty());
    assert_eq!(empty.warnings.len(), 1);

    std::fs::write(
        &path,
        "#split=train\na.ppm\ta.pgm\tcoarse\nb.ppm\tb.pgm\tfine\nc.ppm\tc.pgm\tmid\n",
    )
    .unwrap();
    let m = load_manifest(&path, tax).unwrap();
    assert_eq!(m.split.as_deref(), Some("train"));
    let ids: Vec<_> = m.records.iter().map(|r| r.dataset_id.as_str()).collect();
    assert_eq!(ids, ["coarse", "fine", "mid"]);
    assert_eq!(m.records[1].image, dir.path().join("b.ppm"));

    let rewritten = dir.path().join("m2.tsv");
    write_manifest(&rewritten, &m).unwrap();
    assert_eq!(load_manifest(&rewritten, tax).unwrap(), m);

    for (text, line) in [
        ("a.ppm\ta.pgm\tcoarse\nb.ppm\tmissing.pgm\tfine\n", 2),
        ("a.ppm\ta.pgm\tnope\n", 1),
        ("a.ppm\ta.pgm\n", 1),
    ] {
        std::fs::write(&path, text).unwrap();
        match load_manifest(&path, tax) {
            Err(Error::ParseLine { line: l, .. }) => assert_eq!(l, line, "{text}"),
            other => panic!("{other:?}"),
        }
    }
    assert!(matches!(
        load_manifest(dir.path().join("absent.tsv"), tax),
        Err(Error::Io { .. })
    ));
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    d / (n(a) * n(b))
}

#[test]
fn embeddings_encode_the_hierarchy() {
    let tax = shipped();
    for seed in 0..100 {
        let t = emit_embeddings(tax, seed, 8).unwrap();
        let face = t.get("face").unwrap();
        let head = t.get("head").unwrap();
        for leg in ["upper-legs", "lower-legs", "leg-skin"] {
            assert!(cosine(face, head) > cosine(face, t.get(leg).unwrap()), "{seed} {leg}");
        }
        // Child = parent + orthogonal noise of relative norm 0.3.
        let coat = t.get("coat").unwrap();
        let parent = t.get("upper-clothes").unwrap();
        assert!((cosine(coat, parent) - 1.0 / (1.0f64 + 0.09).sqrt()).abs() < 1e-9);
    }
}

#[test]
fn embeddings_cover_every_token_and_round_trip() {
    let tax = shipped();
    let t = emit_embeddings(tax, 3, 16).unwrap();
    assert_eq!(t.len(), tax.all_tokens().len());
    assert_eq!(t.len(), 28);
    assert_eq!(parse_embeddings(&t.to_text()).unwrap(), t);
    assert_eq!(emit_embeddings(tax, 3, 16).unwrap(), t);
    assert!(matches!(emit_embeddings(tax, 3, 4), Err(Error::Config(_))));
}
