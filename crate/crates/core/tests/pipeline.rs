use ncml_core::checkpoint::{self, CheckpointMeta};
use ncml_core::datasets::{generate, GeneratorParams};
use ncml_core::density::mean_bpd;
use ncml_core::grid::{load_grid_file, read_grid_file, save_grid_file, write_grid_file, write_pnm_mosaic};
use ncml_core::sampling::{complete_image, two_phase_sample, CompletionMode, PartialGrid, SamplerConfig};
use ncml_core::stats::stream_rng;
use ncml_core::training::{train, MuSpec, TrainConfig};
use ncml_core::{Dataset, Model64, ModelArch, SdeSpec};
use proptest::prelude::*;

fn textures(count: usize, seed: u64) -> Dataset {
    generate(
        "textured-patches-8x8",
        &GeneratorParams {
            count,
            bit_depth: 3,
            seed,
        },
    )
    .unwrap()
}

fn trained(data: &Dataset, dims: Vec<usize>, steps: usize) -> Model64 {
    let mut a = ModelArch::new(dims, data.bit_depth(), 0.1);
    a.hidden = vec![24];
    a.components = 3;
    let mut m = Model64::new(a, &mut stream_rng(5, 0)).unwrap();
    let mut c = TrainConfig::new(SdeSpec::vp(), MuSpec::Uniform);
    c.steps = steps;
    c.eval_every = 0;
    train(&mut m, data, data, &c, None).unwrap();
    m
}

#[test]
fn checkpoint_round_trip_preserves_bpd() {
    let data = textures(60, 1).with_labels(None).unwrap();
    let m = trained(&data, vec![8, 8, 1], 40);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ncml");
    let meta = CheckpointMeta {
        sde: Some(SdeSpec::vp()),
        step: 40,
        seed: 5,
    };
    checkpoint::save(&path, &m, &meta).unwrap();
    let (back, got) = checkpoint::load::<f64>(&path).unwrap();
    assert_eq!(got, meta);
    for t in [0.0, 0.05] {
        let (a, b) = (mean_bpd(&m, &data, t).unwrap(), mean_bpd(&back, &data, t).unwrap());
        assert!((a - b).abs() < 1e-5, "t={t}: {a} vs {b}");
    }
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(checkpoint::load::<f64>(&path).is_err());
}

#[test]
fn generated_data_round_trips_through_grid_files() {
    let data = textures(10, 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.grid");
    save_grid_file(&path, &data).unwrap();
    let back = load_grid_file(&path).unwrap();
    assert_eq!(back.values(), data.values());
    assert_eq!((back.dims(), back.bit_depth()), (data.dims(), 3));
    let mut img = Vec::new();
    write_pnm_mosaic(&mut img, &data).unwrap();
    assert!(img.starts_with(b"P5\n37 28\n7\n"));
}

#[test]
fn trained_model_samples_and_completes() {
    let data = textures(80, 3).with_labels(None).unwrap();
    let m = trained(&data, vec![8, 8, 1], 30);
    let spec = SdeSpec::vp();
    let mut c = SamplerConfig::new(0.04, 6);
    c.steps = 10;
    let s = two_phase_sample(&m, &spec, &c, 5, None).unwrap();
    assert_eq!((s.len(), s.dims()), (5, &[8usize, 8, 1][..]));
    assert!(s.values().iter().all(|&v| v < 8));

    let partial = PartialGrid::new(vec![8, 8, 1], 3, data.row(0)[..20].to_vec()).unwrap();
    for mode in [CompletionMode::Direct, CompletionMode::TwoPhase] {
        let out = complete_image(&m, &spec, &partial, mode, &c, 3, None).unwrap();
        for i in 0..out.len() {
            assert_eq!(&out.row(i)[..20], &data.row(0)[..20]);
        }
    }
}

proptest! {
    #[test]
    fn grid_format_round_trips(
        dims in prop::collection::vec(1usize..5, 1..4),
        n in 0usize..6,
        b in 1u8..=8,
        seed in any::<u64>(),
    ) {
        let d: usize = dims.iter().product();
        let top = (1u32 << b) - 1;
        let values: Vec<u8> = (0..n * d).map(|i| ((seed.wrapping_mul(i as u64 + 1) >> 7) as u32 % (top + 1)) as u8).collect();
        let data = Dataset::new(dims.clone(), b, values, None).unwrap();
        let mut buf = Vec::new();
        write_grid_file(&mut buf, &data).unwrap();
        let back = read_grid_file(&buf[..]).unwrap();
        prop_assert_eq!(back.values(), data.values());
        prop_assert_eq!(back.dims(), &dims[..]);
        if n * d > 0 {
            prop_assert!(read_grid_file(&buf[..buf.len() - 1]).is_err());
        }
    }
}
