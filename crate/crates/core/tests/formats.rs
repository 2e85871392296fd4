//! Bit-exact round-trips of every on-disk format.

use ndarray::Array2;
use proptest::prelude::*;
use spectral_vae_core::audio::{encode_pcm16_wav, encode_wav, load_wav, parse_wav, write_wav};
use spectral_vae_core::features::{
    decode_feature_file, decode_patch_set, encode_feature_file, encode_patch_set, read_feature_file,
    write_feature_file, FeatureFile, FeatureRecord, PatchSet, PatchSource,
};
use spectral_vae_core::nn::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, NamedTensor};
use spectral_vae_core::{AudioBuffer, FeatureKind, Patch, Rng, Tensor, VaeConfig, VaeModel};

fn f32_bits() -> impl Strategy<Value = f32> {
    any::<u32>().prop_map(f32::from_bits)
}

proptest! {
    #[test]
    fn wav_pcm_roundtrip(pcm in prop::collection::vec(any::<i16>(), 1..2000)) {
        let bytes = encode_pcm16_wav(&pcm, 16000);
        prop_assert_eq!(bytes.len(), 44 + 2 * pcm.len());
        let audio = parse_wav(&bytes).unwrap();
        prop_assert_eq!(audio.to_pcm16(), pcm);
        prop_assert_eq!(encode_wav(&audio), bytes);
    }

    #[test]
    fn feature_file_roundtrip(
        dim in 1usize..40,
        labels in prop::collection::vec(0u32..7, 0..20),
        seed in any::<u64>(),
    ) {
        let mut rng = Rng::new(seed);
        let records: Vec<FeatureRecord> = labels
            .iter()
            .map(|&label| FeatureRecord {
                label,
                values: (0..dim).map(|_| f32::from_bits(rng.below(u32::MAX as usize) as u32)).collect(),
            })
            .collect();
        let file = FeatureFile { kind: FeatureKind::Mfcc, dim, num_classes: 7, records };
        let bytes = encode_feature_file(&file).unwrap();
        prop_assert_eq!(bytes.len(), file.byte_len());
        let back = decode_feature_file(&bytes).unwrap();
        prop_assert_eq!(encode_feature_file(&back).unwrap(), bytes);
        for (a, b) in back.records.iter().zip(&file.records) {
            prop_assert!(a.values.iter().map(|v| v.to_bits()).eq(b.values.iter().map(|v| v.to_bits())));
        }
    }

    #[test]
    fn special_floats_survive(v in f32_bits()) {
        let file = FeatureFile {
            kind: FeatureKind::Vae,
            dim: 1,
            num_classes: 1,
            records: vec![FeatureRecord { label: 0, values: vec![v] }],
        };
        let back = decode_feature_file(&encode_feature_file(&file).unwrap()).unwrap();
        prop_assert_eq!(back.records[0].values[0].to_bits(), v.to_bits());
    }

    #[test]
    fn truncated_feature_files_are_rejected(cut in 0usize..100) {
        let file = FeatureFile {
            kind: FeatureKind::Mfcc,
            dim: 4,
            num_classes: 2,
            records: vec![FeatureRecord { label: 1, values: vec![1.0; 4] }; 5],
        };
        let bytes = encode_feature_file(&file).unwrap();
        let cut = cut.min(bytes.len() - 1);
        prop_assert!(decode_feature_file(&bytes[..cut]).is_err());
    }

    #[test]
    fn checkpoint_roundtrip(shape in prop::collection::vec(1usize..5, 1..4), seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let t = Tensor::from_fn(&shape, || f64::from_bits(rng.below(usize::MAX) as u64));
        let tensors = vec![NamedTensor::new("a.w", t), NamedTensor::new("", Tensor::zeros(&[0]))];
        let bytes = encode_checkpoint(&tensors);
        let back = decode_checkpoint(&bytes).unwrap();
        prop_assert_eq!(encode_checkpoint(&back), bytes);
        prop_assert_eq!(&back[0].name, "a.w");
        prop_assert_eq!(back[0].tensor.shape(), &shape[..]);
    }
}

#[test]
fn wav_files_roundtrip_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.wav");
    let audio = AudioBuffer::from_pcm16(&[16384, -32768, 0, 32767], 16000);
    write_wav(&audio, &path).unwrap();
    let back = load_wav(&path).unwrap();
    assert_eq!(back.samples, vec![0.5, -1.0, 0.0, 32767.0 / 32768.0]);
    assert_eq!(back, audio);
}

#[test]
fn feature_files_roundtrip_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.sfea");
    let file = FeatureFile {
        kind: FeatureKind::Vae,
        dim: 320,
        num_classes: 30,
        records: (0..3)
            .map(|i| FeatureRecord {
                label: i,
                values: (0..320).map(|j| j as f32 * 0.25 - i as f32).collect(),
            })
            .collect(),
    };
    write_feature_file(&path, &file).unwrap();
    assert_eq!(std::fs::metadata(&path).unwrap().len() as usize, 21 + 3 * (4 + 4 * 320));
    assert_eq!(read_feature_file(&path).unwrap(), file);
}

#[test]
fn patch_sets_roundtrip() {
    let mut rng = Rng::new(4);
    let set = PatchSet {
        frames: 8,
        bins: 128,
        norm_scale: 27.5,
        patches: (0..3)
            .map(|i| Patch {
                data: Array2::from_shape_fn((8, 128), |_| rng.uniform(0.0, 1.0)),
                source: PatchSource {
                    file_id: i,
                    start_frame: 3 * i,
                },
            })
            .collect(),
    };
    let bytes = encode_patch_set(&set).unwrap();
    assert_eq!(decode_patch_set(&bytes).unwrap(), set);
}

#[test]
fn model_checkpoint_roundtrips_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let mut model = VaeModel::new(VaeConfig::patch(), &mut Rng::new(9)).unwrap();
    model.norm_scale = 23.25;
    save_checkpoint(&path, &model.to_checkpoint()).unwrap();
    let back = VaeModel::from_checkpoint(&load_checkpoint(&path).unwrap()).unwrap();
    assert_eq!(back.norm_scale, 23.25);
    assert_eq!(back.stft, model.stft);
    assert_eq!(encode_checkpoint(&back.to_checkpoint()), encode_checkpoint(&model.to_checkpoint()));
    let p = Array2::from_elem((8, 128), 0.4);
    assert_eq!(back.reconstruct(&p).unwrap(), model.reconstruct(&p).unwrap());
}
