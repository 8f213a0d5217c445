use obfusim_nn::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn checkpoint_roundtrip_is_bit_exact(seed in any::<u64>(), scale in -1e6f64..1e6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut head = DenseHead::new(&[7, 5, 3], Activation::Tanh, FinalActivation::Softmax, &mut rng).unwrap();
        for p in head.params_mut() {
            p.value.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
        let text = to_checkpoint_string("head", &head).unwrap();
        let back: DenseHead = from_checkpoint_str("head", &text).unwrap();
        for (a, b) in head.params().iter().zip(back.params()) {
            let ab: Vec<u64> = a.value.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = b.value.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(ab, bb);
            prop_assert_eq!(a.value.shape(), b.value.shape());
        }
    }
}

#[test]
fn checkpoint_file_checks_kind_and_version() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("enc.json");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let enc = TextCnnEncoder::new(CnnConfig { rows: 4, cols: 3, kernel_heights: vec![2], filters_per_kernel: 2 }, &mut rng).unwrap();
    save_checkpoint(&path, "encoder", &enc).unwrap();
    let back: TextCnnEncoder = load_checkpoint(&path, "encoder").unwrap();
    assert_eq!(back, enc);
    assert!(load_checkpoint::<TextCnnEncoder>(&path, "lstm").is_err());

    let text = std::fs::read_to_string(&path).unwrap().replace("\"format_version\":1", "\"format_version\":99");
    assert!(from_checkpoint_str::<TextCnnEncoder>("encoder", &text).is_err());
}
