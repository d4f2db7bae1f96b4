//! Synthetic generator properties and dataset round-trips.

use gait_core::data::synth::{
    gen_identities, gen_identity, is_separated, render_sequence, write_dataset, GenConfig,
};
use gait_core::data::{
    joints, load_dataset, load_sequence, Condition, SilhouetteSequence,
};
use gait_core::seeds::substream;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

#[test]
fn same_seed_same_identity() {
    let a = gen_identity(&mut ChaCha12Rng::seed_from_u64(5));
    let b = gen_identity(&mut ChaCha12Rng::seed_from_u64(5));
    assert_eq!(a, b);
}

#[test]
fn identity_parameters_within_documented_ranges() {
    use gait_core::data::synth::ranges;
    let mut rng = ChaCha12Rng::seed_from_u64(6);
    for _ in 0..200 {
        let id = gen_identity(&mut rng);
        assert!(id.femur >= ranges::FEMUR.0 && id.femur <= ranges::FEMUR.1);
        assert!(id.tibia >= ranges::TIBIA.0 && id.tibia <= ranges::TIBIA.1);
        assert!(id.humerus >= ranges::HUMERUS.0 && id.humerus <= ranges::HUMERUS.1);
        assert!(id.forearm >= ranges::FOREARM.0 && id.forearm <= ranges::FOREARM.1);
        assert!(id.torso >= ranges::TORSO.0 && id.torso <= ranges::TORSO.1);
        assert!(id.period >= ranges::PERIOD.0 && id.period <= ranges::PERIOD.1);
        assert!(id.frequency() > 0.0 && id.frequency() < 0.5);
        assert!(id.phase < id.period);
    }
}

#[test]
fn hundred_identities_pairwise_separated() {
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    let ids = gen_identities(&mut rng, 100).unwrap();
    for i in 0..ids.len() {
        for j in (i + 1)..ids.len() {
            assert!(
                is_separated(&ids[i], &ids[j]),
                "identities {i} and {j} too close"
            );
        }
    }
}

#[test]
fn render_rejects_unknown_view() {
    let mut rng = ChaCha12Rng::seed_from_u64(8);
    let id = gen_identity(&mut rng);
    assert!(render_sequence(&id, 400, Condition::Nm, 5, 64, 44, &mut rng, 0.0).is_err());
}

#[test]
fn silhouette_pixels_binary_and_keypoints_in_bounds() {
    let mut rng = ChaCha12Rng::seed_from_u64(9);
    let ids = gen_identities(&mut rng, 3).unwrap();
    for id in &ids {
        for view in [0u16, 54, 90, 126, 180] {
            for cond in Condition::ALL {
                let (pixels, keys) =
                    render_sequence(id, view, cond, 6, 64, 44, &mut rng, 0.0).unwrap();
                assert!(pixels.iter().all(|&p| p == 0 || p == 255));
                assert!(pixels.contains(&255), "empty silhouette");
                for frame in &keys.frames {
                    for j in frame {
                        assert!(j[0] >= 0.0 && j[0] <= 43.0);
                        assert!(j[1] >= 0.0 && j[1] <= 63.0);
                        assert_eq!(j[2], 1.0);
                    }
                }
            }
        }
    }
}

#[test]
fn gait_is_periodic_bitwise() {
    let mut rng = ChaCha12Rng::seed_from_u64(10);
    let id = gen_identity(&mut rng);
    let period = id.period as usize;
    let frames = 2 * period + 3;
    let (pixels, keys) =
        render_sequence(&id, 72, Condition::Nm, frames, 64, 44, &mut rng, 0.0).unwrap();
    let sz = 64 * 44;
    for t in 0..frames - period {
        assert_eq!(
            &pixels[t * sz..(t + 1) * sz],
            &pixels[(t + period) * sz..(t + period + 1) * sz],
            "frame {t} vs {}",
            t + period
        );
        let a = &keys.frames[t];
        let b = &keys.frames[t + period];
        for (ja, jb) in a.iter().zip(b.iter()) {
            assert_eq!(ja[0].to_bits(), jb[0].to_bits());
            assert_eq!(ja[1].to_bits(), jb[1].to_bits());
        }
    }
}

#[test]
fn views_0_and_180_are_mirror_images() {
    let mut rng = ChaCha12Rng::seed_from_u64(11);
    let id = gen_identity(&mut rng);
    // identical per-sequence phase: clone the rng state for both renders
    let mut rng_a = ChaCha12Rng::seed_from_u64(999);
    let mut rng_b = ChaCha12Rng::seed_from_u64(999);
    let (a, _) = render_sequence(&id, 0, Condition::Nm, 4, 64, 44, &mut rng_a, 0.0).unwrap();
    let (b, _) = render_sequence(&id, 180, Condition::Nm, 4, 64, 44, &mut rng_b, 0.0).unwrap();
    let (h, w) = (64usize, 44usize);
    for t in 0..4 {
        for r in 0..h {
            for c in 0..w {
                let lhs = a[t * h * w + r * w + c];
                let rhs = b[t * h * w + r * w + (w - 1 - c)];
                assert_eq!(lhs, rhs, "frame {t} row {r} col {c}");
            }
        }
    }
}

#[test]
fn hip_midpoint_matches_torso_band_centroid_column() {
    let mut rng = ChaCha12Rng::seed_from_u64(12);
    let ids = gen_identities(&mut rng, 2).unwrap();
    for id in &ids {
        for view in [0u16, 36, 90, 144, 180] {
            for cond in Condition::ALL {
                let (pixels, keys) =
                    render_sequence(id, view, cond, 8, 64, 44, &mut rng, 0.0).unwrap();
                for (t, frame) in keys.frames.iter().enumerate() {
                    let hip_mid_x =
                        (frame[joints::LEFT_HIP][0] + frame[joints::RIGHT_HIP][0]) / 2.0;
                    let hip_y = (frame[joints::LEFT_HIP][1] + frame[joints::RIGHT_HIP][1]) / 2.0;
                    let shoulder_y = (frame[joints::LEFT_SHOULDER][1]
                        + frame[joints::RIGHT_SHOULDER][1])
                        / 2.0;
                    let row_lo = shoulder_y.ceil() as usize;
                    let row_hi = (hip_y.floor() as usize).min(63);
                    let mut sum_c = 0.0;
                    let mut count = 0.0;
                    for r in row_lo..=row_hi {
                        for c in 0..44usize {
                            if pixels[t * 64 * 44 + r * 44 + c] == 255 {
                                sum_c += c as f64 + 0.5;
                                count += 1.0;
                            }
                        }
                    }
                    assert!(count > 0.0);
                    let centroid = sum_c / count;
                    assert!(
                        (centroid - hip_mid_x).abs() <= 2.0,
                        "view {view} {cond} frame {t}: centroid {centroid:.2} vs hip {hip_mid_x:.2}"
                    );
                }
            }
        }
    }
}

#[test]
fn conditions_change_silhouette_but_not_keypoints() {
    let mut rng = ChaCha12Rng::seed_from_u64(13);
    let id = gen_identity(&mut rng);
    let render = |cond| {
        let mut r = ChaCha12Rng::seed_from_u64(55);
        render_sequence(&id, 90, cond, 4, 64, 44, &mut r, 0.0).unwrap()
    };
    let (nm, k_nm) = render(Condition::Nm);
    let (bg, k_bg) = render(Condition::Bg);
    let (cl, k_cl) = render(Condition::Cl);
    assert_ne!(nm, bg);
    assert_ne!(nm, cl);
    for ((a, b), c) in k_nm.frames.iter().zip(&k_bg.frames).zip(&k_cl.frames) {
        assert_eq!(a, b);
        assert_eq!(a, c);
    }
    // the coat covers at least as many pixels as the normal silhouette
    let lit = |p: &Vec<u8>| p.iter().filter(|&&v| v == 255).count();
    assert!(lit(&cl) > lit(&nm));
}

#[test]
fn dataset_write_load_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    let cfg = GenConfig {
        identities: 2,
        views: vec![0, 90],
        conditions: vec![Condition::Nm, Condition::Cl],
        sequences_per_cell: 2,
        frames: 5,
        height: 64,
        width: 44,
        jitter_std: 0.0,
    };
    let mut rng = substream(77, "data");
    write_dataset(&root, &cfg, &mut rng).unwrap();

    let index = load_dataset(&root, true).unwrap();
    assert_eq!(index.entries.len(), cfg.sequence_count());
    assert_eq!(index.identities(), vec!["001".to_string(), "002".to_string()]);

    // regenerate and compare payloads bit-exactly
    let mut rng2 = substream(77, "data");
    let ids = gen_identities(&mut rng2, 2).unwrap();
    // first sequence written: identity 001, NM, seq 0, view 0
    let (pixels, keys) =
        render_sequence(&ids[0], 0, Condition::Nm, 5, 64, 44, &mut rng2, 0.0).unwrap();
    let entry = index
        .entries
        .iter()
        .find(|e| e.id() == "001-NM-00-000")
        .unwrap();
    let (sil, loaded_keys) = load_sequence(entry).unwrap();
    let expect =
        SilhouetteSequence::new("001".into(), Condition::Nm, 0, 0, 64, 44, pixels).unwrap();
    for t in 0..5 {
        assert_eq!(sil.frame(t), expect.frame(t));
    }
    for (a, b) in loaded_keys.frames.iter().zip(&keys.frames) {
        for (ja, jb) in a.iter().zip(b.iter()) {
            assert_eq!(ja[0].to_bits(), jb[0].to_bits());
            assert_eq!(ja[1].to_bits(), jb[1].to_bits());
            assert_eq!(ja[2].to_bits(), jb[2].to_bits());
        }
    }
}

#[test]
fn deleting_sidecar_fails_strict_load_naming_path() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    let cfg = GenConfig {
        identities: 1,
        views: vec![0],
        conditions: vec![Condition::Nm],
        sequences_per_cell: 1,
        frames: 3,
        height: 64,
        width: 44,
        jitter_std: 0.0,
    };
    let mut rng = substream(5, "data");
    write_dataset(&root, &cfg, &mut rng).unwrap();
    let sidecar = root.join("001").join("NM-00").join("000").join("keypoints.txt");
    std::fs::remove_file(&sidecar).unwrap();
    let err = load_dataset(&root, true).unwrap_err().to_string();
    assert!(err.contains("keypoints.txt"), "{err}");
    // non-strict mode skips with a warning
    let index = load_dataset(&root, false).unwrap();
    assert_eq!(index.entries.len(), 0);
    assert_eq!(index.warnings.len(), 1);
}

#[test]
fn default_gen_config_counts() {
    let cfg = GenConfig::default();
    assert_eq!(cfg.views.len(), 11);
    assert_eq!(cfg.conditions.len(), 3);
    assert_eq!(cfg.sequence_count(), 8 * 11 * 3 * 2);
}

#[test]
fn keypoint_jitter_moves_keypoints_only() {
    let mut rng = ChaCha12Rng::seed_from_u64(14);
    let id = gen_identity(&mut rng);
    let render = |jitter: f64| {
        let mut r = ChaCha12Rng::seed_from_u64(77);
        render_sequence(&id, 90, Condition::Nm, 4, 64, 44, &mut r, jitter).unwrap()
    };
    let (clean_px, clean_k) = render(0.0);
    let (noisy_px, noisy_k) = render(0.8);
    assert_eq!(clean_px, noisy_px, "jitter must not touch the silhouette");
    let mut moved = false;
    for (a, b) in clean_k.frames.iter().zip(&noisy_k.frames) {
        for (ja, jb) in a.iter().zip(b.iter()) {
            if ja[0] != jb[0] || ja[1] != jb[1] {
                moved = true;
            }
            assert!(jb[0] >= 0.0 && jb[0] <= 43.0 && jb[1] >= 0.0 && jb[1] <= 63.0);
            assert_eq!(jb[2], 1.0);
        }
    }
    assert!(moved, "jitter must perturb keypoints");
}

#[test]
fn generation_is_pure_in_the_seed() {
    let cfg = GenConfig {
        identities: 1,
        views: vec![36],
        conditions: vec![Condition::Bg],
        sequences_per_cell: 1,
        frames: 4,
        height: 64,
        width: 44,
        jitter_std: 0.0,
    };
    let dir = tempfile::tempdir().unwrap();
    let (ra, rb) = (dir.path().join("a"), dir.path().join("b"));
    write_dataset(&ra, &cfg, &mut substream(9, "data")).unwrap();
    write_dataset(&rb, &cfg, &mut substream(9, "data")).unwrap();
    let frame_a = std::fs::read(ra.join("001/BG-00/036/0000.pgm")).unwrap();
    let frame_b = std::fs::read(rb.join("001/BG-00/036/0000.pgm")).unwrap();
    assert_eq!(frame_a, frame_b);
    let keys_a = std::fs::read(ra.join("001/BG-00/036/keypoints.txt")).unwrap();
    let keys_b = std::fs::read(rb.join("001/BG-00/036/keypoints.txt")).unwrap();
    assert_eq!(keys_a, keys_b);
}
