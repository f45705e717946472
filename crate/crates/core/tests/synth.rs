use warpnorm_core::synth::{
    derive_occlusion, flow_pyramid, gen_flow, gen_scene, mask_pyramid, Motion, Part, SceneSpec,
    TextureKind,
};
use warpnorm_core::{tensor, Shape4, Tensor4};

fn constant_flow(h: usize, w: usize, dy: f64, dx: f64) -> Tensor4 {
    Tensor4::from_fn(
        Shape4::new(1, 2, h, w),
        |_, c, _, _| if c == 0 { dy } else { dx },
    )
}

fn spec(motion: Motion) -> SceneSpec {
    SceneSpec::default().with_motion(motion)
}

/// Mean |warp(x_s) − x_t| over fully visible pixels.
fn visible_warp_error(seed: u64, motion: Motion) -> f64 {
    let s = gen_scene(seed, &spec(motion)).unwrap();
    let warped = tensor::bilinear_sample(&s.x_s, &s.flow_gt).unwrap();
    let (h, w) = (s.spec.height, s.spec.width);
    let mut sum = 0.0;
    let mut n = 0usize;
    for y in 0..h {
        for x in 0..w {
            if s.occlusion.at(0, 0, y, x) == 1.0 {
                for c in 0..3 {
                    sum += (warped.at(0, c, y, x) - s.x_t.at(0, c, y, x)).abs();
                    n += 1;
                }
            }
        }
    }
    assert!(n > 0);
    sum / n as f64
}

#[test]
fn same_seed_same_scene() {
    let sp = spec(Motion::Rotate { degrees: 12.0 });
    assert_eq!(gen_scene(3, &sp).unwrap(), gen_scene(3, &sp).unwrap());
    assert_ne!(
        gen_scene(3, &sp).unwrap().x_s,
        gen_scene(4, &sp).unwrap().x_s
    );
}

#[test]
fn identity_motion_leaves_target_equal_to_source() {
    let s = gen_scene(1, &spec(Motion::Identity)).unwrap();
    assert_eq!(s.x_t, s.x_s);
    assert!(s.flow_gt.data().iter().all(|&v| v == 0.0));
    assert_eq!(s.region_masks_t, s.region_masks_s);
    assert_eq!(s.p_t, s.p_s);
}

#[test]
fn translation_gives_constant_flow_and_matching_warp() {
    let s = gen_scene(2, &spec(Motion::Translate { dy: 3.0, dx: -2.0 })).unwrap();
    assert_eq!(s.flow_gt, constant_flow(64, 64, 3.0, -2.0));
    assert!(visible_warp_error(2, Motion::Translate { dy: 3.0, dx: -2.0 }) < 1e-6);
}

#[test]
fn warp_reproduces_target_on_visible_region() {
    let motions = [
        Motion::Identity,
        Motion::Translate { dy: -4.5, dx: 1.25 },
        Motion::Rotate { degrees: -20.0 },
        Motion::Rotate { degrees: 30.0 },
        Motion::Affine {
            a: [[1.1, 0.1], [-0.05, 0.9]],
            t: [2.0, -1.0],
        },
    ];
    for seed in 0..8 {
        for m in motions {
            let err = visible_warp_error(seed, m);
            assert!(err < 1e-6, "seed {seed} motion {m}: {err}");
        }
    }
}

#[test]
fn region_masks_partition_the_frame() {
    for seed in 0..10 {
        let s = gen_scene(seed, &spec(Motion::Rotate { degrees: 15.0 })).unwrap();
        assert!(s.region_masks_s.is_partition());
        assert!(s.region_masks_t.is_partition());
        for part in Part::ALL {
            assert!(
                s.region_masks_s.mask(part).sum() > 0.0,
                "seed {seed} part {part:?} empty"
            );
        }
    }
}

#[test]
fn flow_kinds() {
    assert_eq!(
        gen_flow(&Motion::Translate { dy: 1.5, dx: -2.0 }, 8, 6).unwrap(),
        constant_flow(8, 6, 1.5, -2.0)
    );
    assert!(gen_flow(&Motion::Rotate { degrees: 0.0 }, 8, 8)
        .unwrap()
        .data()
        .iter()
        .all(|&v| v == 0.0));
    assert!(gen_flow(&Motion::Rotate { degrees: 31.0 }, 8, 8).is_err());
    let singular = Motion::Affine {
        a: [[1.0, 2.0], [2.0, 4.0]],
        t: [0.0, 0.0],
    };
    assert!(gen_flow(&singular, 8, 8).is_err());
}

#[test]
fn quarter_turn_relocates_delta() {
    // A quarter turn is outside the random-motion range, so go through the
    // affine form; integer coordinates keep bilinear sampling exact.
    let quarter = Motion::Affine {
        a: [[0.0, -1.0], [1.0, 0.0]],
        t: [0.0, 0.0],
    };
    let n = 7;
    let c = 3i64;
    for (sy, sx) in [(1i64, 2i64), (0, 0), (5, 3), (3, 3)] {
        let mut delta = Tensor4::zeros(Shape4::new(1, 1, n, n));
        delta.set(0, 0, sy as usize, sx as usize, 1.0);
        let out = tensor::bilinear_sample(&delta, &gen_flow(&quarter, n, n).unwrap()).unwrap();
        // p = Aᵀ (s − c) + c
        let (py, px) = ((sx - c) + c, -(sy - c) + c);
        for y in 0..n {
            for x in 0..n {
                let want = if (y as i64, x as i64) == (py, px) {
                    1.0
                } else {
                    0.0
                };
                assert!(
                    (out.at(0, 0, y, x) - want).abs() < 1e-12,
                    "source ({sy},{sx}) at ({y},{x})"
                );
            }
        }
    }
}

#[test]
fn occlusion_cases() {
    let occ = derive_occlusion(&constant_flow(16, 16, 0.0, 0.0)).unwrap();
    assert!(occ.data().iter().all(|&v| v == 1.0));

    let occ = derive_occlusion(&constant_flow(32, 32, 5.0, 0.0)).unwrap();
    for y in 0..32 {
        for x in 0..32 {
            let want = if y >= 27 { 0.0 } else { 1.0 };
            assert_eq!(occ.at(0, 0, y, x), want, "row {y}");
        }
    }

    let half = derive_occlusion(&constant_flow(8, 8, 0.0, -0.5)).unwrap();
    assert_eq!(half.at(0, 0, 3, 0), 0.5);
    assert_eq!(half.at(0, 0, 3, 1), 1.0);

    for seed in 0..5 {
        let s = gen_scene(
            seed,
            &spec(Motion::Affine {
                a: [[0.8, 0.3], [-0.2, 1.2]],
                t: [6.0, -7.0],
            }),
        )
        .unwrap();
        assert!(s.occlusion.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn pyramid_halves_constant_flow() {
    let f = constant_flow(16, 16, 4.0, 2.0);
    let occ = Tensor4::full(Shape4::new(1, 1, 16, 16), 1.0);
    let pyr = flow_pyramid(&f, &occ, 3).unwrap();
    assert_eq!(pyr.len(), 3);
    for (k, (dy, dx)) in [(4.0, 2.0), (2.0, 1.0), (1.0, 0.5)].into_iter().enumerate() {
        let side = 16 >> k;
        assert_eq!(pyr.levels[k].flow, constant_flow(side, side, dy, dx));
        assert!(pyr.levels[k].occ.data().iter().all(|&v| v == 1.0));
    }

    let single = flow_pyramid(&f, &occ, 1).unwrap();
    assert_eq!(single.len(), 1);
    assert_eq!(single.levels[0].flow, f);

    let zero = flow_pyramid(&constant_flow(16, 16, 0.0, 0.0), &occ, 3).unwrap();
    assert!(zero
        .levels
        .iter()
        .all(|l| l.flow.data().iter().all(|&v| v == 0.0)));

    let odd = constant_flow(12, 10, 1.0, 1.0);
    assert!(flow_pyramid(&odd, &Tensor4::full(Shape4::new(1, 1, 12, 10), 1.0), 3).is_err());
}

#[test]
fn scene_pyramids_are_consistent() {
    for seed in 0..6 {
        let s = gen_scene(seed, &spec(Motion::Rotate { degrees: 25.0 })).unwrap();
        let pyr = s.pyramid().unwrap();
        for k in 1..pyr.len() {
            let prev = &pyr.levels[k - 1];
            assert_eq!(
                pyr.levels[k].flow,
                tensor::scale(&tensor::avgpool2x(&prev.flow).unwrap(), 0.5)
            );
            assert!(pyr.levels[k]
                .occ
                .data()
                .iter()
                .all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

#[test]
fn mask_pyramid_stays_binary() {
    let s = gen_scene(3, &spec(Motion::Identity)).unwrap();
    let levels = mask_pyramid(s.region_masks_s.mask(Part::Top), 3).unwrap();
    assert_eq!(levels.len(), 3);
    for (k, m) in levels.iter().enumerate() {
        assert_eq!(m.shape(), Shape4::new(1, 1, 64 >> k, 64 >> k));
        assert!(m.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }
}

#[test]
fn invalid_specs_are_config_errors() {
    let small = SceneSpec {
        height: 16,
        width: 16,
        ..SceneSpec::default()
    };
    assert!(gen_scene(0, &small).is_err());
    let indivisible = SceneSpec {
        height: 34,
        width: 34,
        ..SceneSpec::default()
    };
    assert!(gen_scene(0, &indivisible).is_err());
    assert!(gen_scene(0, &spec(Motion::Rotate { degrees: 45.0 })).is_err());
}

#[test]
fn motion_and_texture_names_round_trip() {
    for m in [
        Motion::Identity,
        Motion::Translate { dy: 3.0, dx: -2.0 },
        Motion::Rotate { degrees: 12.5 },
        Motion::Affine {
            a: [[1.0, 0.25], [0.0, 1.0]],
            t: [1.0, 2.0],
        },
    ] {
        assert_eq!(m.to_string().parse::<Motion>().unwrap(), m);
    }
    assert!("spin(3)".parse::<Motion>().is_err());
    assert!("rotate(60)".parse::<Motion>().is_err());
    for t in [
        TextureKind::Solid,
        TextureKind::Stripes,
        TextureKind::Checker,
    ] {
        assert_eq!(t.name().parse::<TextureKind>().unwrap(), t);
    }
}

#[test]
fn motion_inverse_undoes_translation() {
    let m = Motion::Translate { dy: 2.0, dx: -3.0 };
    assert_eq!(
        m.inverse().unwrap(),
        Motion::Translate { dy: -2.0, dx: 3.0 }
    );
    let a = Motion::Affine {
        a: [[2.0, 0.0], [0.0, 4.0]],
        t: [2.0, 4.0],
    };
    let Motion::Affine { a: inv, t } = a.inverse().unwrap() else {
        panic!("affine inverse")
    };
    assert_eq!(inv, [[0.5, 0.0], [0.0, 0.25]]);
    assert_eq!(t, [-1.0, -1.0]);
}
