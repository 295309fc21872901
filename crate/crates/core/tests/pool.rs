mod common;

use common::{binomial_interval, desk_pool, desk_world, k2_oracle, POOL_SEED};
use invkit::domain::ImageShape;
use invkit::models::{Generator, SyntheticDetector};
use invkit::pool::{
    build_pool, decode_pool, encode_pool, load_pool, sample_latent, save_pool, LatentPool, PoolSpec,
    POOL_FORMAT_VERSION,
};
use invkit::stats::{k2_test, NormalityMode};
use invkit::Error;
use proptest::prelude::*;

fn loose_pool(volume: usize, seed: u64) -> LatentPool {
    let world = desk_world();
    let spec = PoolSpec {
        volume,
        tau_k: 0.0,
        tau_d: 0.0,
        build_seed: seed,
        ..PoolSpec::default()
    };
    build_pool(world.generator.as_ref(), world.detector.as_ref(), &spec).unwrap()
}

#[test]
fn strict_pool_entries_clear_both_screens() {
    let world = desk_world();
    let pool = desk_pool(&world, 1000);
    assert_eq!(pool.len(), 1000);
    assert_eq!(pool.volume, 1000);
    let mut last = None;
    for e in &pool.entries {
        let oracle = k2_oracle::k2(&e.latent.values);
        let p_k = e.latent.p_k.unwrap();
        assert!(p_k >= 0.999 && oracle.p_value >= 0.999);
        assert!((p_k - oracle.p_value).abs() < 1e-9);
        assert!(e.latent.p_d.unwrap() >= 0.999);
        assert_eq!(e.latent.values, sample_latent(64, e.latent.seed).values);
        let image = world.generator.generate(&e.latent.values).unwrap();
        for (a, b) in e.image.values().iter().zip(image.values()) {
            assert_eq!(*a, *b as f32 as f64);
        }
        assert!(last.is_none_or(|s| s < e.latent.seed));
        last = Some(e.latent.seed);
    }
}

#[test]
fn build_stats_account_for_every_draw() {
    let world = desk_world();
    let pool = desk_pool(&world, 200);
    let s = pool.stats;
    let last = pool.entries.last().unwrap().latent.seed;
    assert_eq!(s.drawn, last - POOL_SEED + 1);
    assert_eq!(s.generations, s.normality_accepted);
    assert_eq!(s.detector_accepted, 200);
    let passing = (POOL_SEED..=last)
        .filter(|&seed| k2_test(&sample_latent(64, seed).values).unwrap().p_value >= 0.999)
        .count() as u64;
    assert_eq!(passing, s.normality_accepted);
    let (lo, hi) = binomial_interval(s.drawn as usize, 0.001, 0.999);
    assert!((lo as u64..=hi as u64).contains(&s.normality_accepted), "{s:?}");
}

#[test]
fn unscreened_single_entry_pool_generates_once() {
    let pool = loose_pool(1, 42);
    assert_eq!(pool.len(), 1);
    assert_eq!(pool.entries[0].latent.seed, 42);
    assert_eq!(pool.stats.drawn, 1);
    assert_eq!(pool.stats.generations, 1);
    assert_eq!(pool.stats.normality_accepted, 1);
}

#[test]
fn rebuilds_are_byte_identical() {
    let world = desk_world();
    let a = encode_pool(&desk_pool(&world, 50)).unwrap();
    let b = encode_pool(&desk_pool(&world, 50)).unwrap();
    assert_eq!(a, b);
    let other = PoolSpec {
        volume: 50,
        build_seed: POOL_SEED + 1,
        ..PoolSpec::default()
    };
    let c = encode_pool(&build_pool(world.generator.as_ref(), world.detector.as_ref(), &other).unwrap()).unwrap();
    assert_ne!(a, c);
}

#[test]
fn pool_file_round_trips() {
    let world = desk_world();
    let pool = desk_pool(&world, 20);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pool.bin");
    save_pool(&pool, &path).unwrap();
    assert_eq!(load_pool(&path).unwrap(), pool);
}

#[test]
fn damaged_files_are_rejected() {
    let bytes = encode_pool(&loose_pool(5, 3)).unwrap();

    for cut in [bytes.len() - 1, bytes.len() / 2, 40] {
        assert!(matches!(decode_pool(&bytes[..cut]), Err(Error::ChecksumMismatch(_))), "cut {cut}");
    }

    let mut flipped = bytes.clone();
    let mid = bytes.len() / 2;
    flipped[mid] ^= 0x10;
    assert!(matches!(decode_pool(&flipped), Err(Error::ChecksumMismatch(_))));

    let mut bumped = bytes.clone();
    bumped[5..7].copy_from_slice(&(POOL_FORMAT_VERSION + 1).to_le_bytes());
    assert!(matches!(
        decode_pool(&bumped),
        Err(Error::FormatVersionMismatch { found, supported }) if found == POOL_FORMAT_VERSION + 1 && supported == POOL_FORMAT_VERSION
    ));

    let mut magic = bytes;
    magic[0] = b'X';
    assert!(matches!(decode_pool(&magic), Err(Error::Malformed(_))));
}

#[test]
fn missing_file_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_pool(&dir.path().join("absent.bin")), Err(Error::Io(_))));
}

#[test]
fn draw_cap_exhausts() {
    let world = desk_world();
    let spec = PoolSpec {
        volume: 5,
        max_draws: Some(100),
        ..PoolSpec::default()
    };
    match build_pool(world.generator.as_ref(), world.detector.as_ref(), &spec) {
        Err(Error::PoolExhausted { drawn, wanted, accepted }) => {
            assert_eq!(drawn, 100);
            assert_eq!(wanted, 5);
            assert!(accepted < 5);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn invalid_specs_are_rejected() {
    let world = desk_world();
    let (g, d) = (world.generator.as_ref(), world.detector.as_ref());
    for spec in [
        PoolSpec { volume: 0, ..PoolSpec::default() },
        PoolSpec { tau_k: 1.5, ..PoolSpec::default() },
        PoolSpec { tau_d: -0.1, ..PoolSpec::default() },
        PoolSpec { tau_d: 1.0 + f64::EPSILON, ..PoolSpec::default() },
    ] {
        assert!(matches!(build_pool(g, d, &spec), Err(Error::ConfigInvalid(_))), "{spec:?}");
    }
    let small = ImageShape::new(1, 4, 4);
    let other = SyntheticDetector::new("small", small, vec![0.0; 16], 1.0, 0.0).unwrap();
    assert!(matches!(build_pool(g, &other, &PoolSpec::default()), Err(Error::ShapeMismatch { .. })));
}

#[test]
fn per_channel_screen_is_stricter_than_its_channels() {
    let world = desk_world();
    let spec = PoolSpec {
        volume: 5,
        tau_k: 0.9,
        tau_d: 0.0,
        build_seed: 9,
        normality: NormalityMode::PerChannel { channels: 2 },
        ..PoolSpec::default()
    };
    let pool = build_pool(world.generator.as_ref(), world.detector.as_ref(), &spec).unwrap();
    for e in &pool.entries {
        for half in e.latent.values.chunks(32) {
            assert!(k2_test(half).unwrap().p_value >= 0.9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn encoding_round_trips(volume in 1usize..12, seed in any::<u64>()) {
        let pool = loose_pool(volume, seed);
        let bytes = encode_pool(&pool).unwrap();
        prop_assert_eq!(decode_pool(&bytes).unwrap(), pool);
    }

    #[test]
    fn corrupted_bytes_never_decode(pos in any::<prop::sample::Index>(), bit in 0u8..8) {
        let bytes = encode_pool(&loose_pool(3, 1)).unwrap();
        let mut bad = bytes.clone();
        let i = pos.index(bad.len());
        bad[i] ^= 1 << bit;
        prop_assert!(decode_pool(&bad).is_err());
    }
}
