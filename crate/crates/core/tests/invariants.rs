use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use uvhead::diffusion::{fold, unfold, normalize_avatar};
use uvhead::edit::{apply_expression_offset, region_transfer, ChannelSelector, UVMask};
use uvhead::io::{toy_anchors, toy_reference, ToyKind};
use uvhead::model::init_from_anchors;
use uvhead::render::composite;
use uvhead::spatial::{brute_force_knn_points, UniformGridIndex};
use uvhead::{UVAvatar, Vec3};

fn reference(phase: f64) -> UVAvatar {
    let anchors = toy_anchors(ToyKind::CheckerSphere, 4).unwrap();
    toy_reference(ToyKind::CheckerSphere, &anchors, 3, phase).unwrap()
}

fn perturbed(seed: u64) -> UVAvatar {
    use rand::Rng;
    let mut a = reference(seed as f64 * 0.1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in &mut a.poses {
        p.center += Vec3::new(rng.random_range(-0.01..0.01), rng.random_range(-0.01..0.01), 0.0);
        p.rotation.x += rng.random_range(-0.3..0.3);
    }
    a
}

fn selector() -> impl Strategy<Value = ChannelSelector> {
    prop_oneof![
        Just(ChannelSelector::Geometry),
        Just(ChannelSelector::Texture),
        Just(ChannelSelector::Both)
    ]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn grid_knn_matches_brute_force(
        pts in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 1..60),
        q in (-1.5f64..1.5, -1.5f64..1.5, -1.5f64..1.5),
        k in 1usize..8,
        cell in 0.05f64..0.8,
    ) {
        let centers: Vec<Vec3> = pts.iter().map(|&(x, y, z)| Vec3::new(x, y, z)).collect();
        let x = Vec3::new(q.0, q.1, q.2);
        let index = UniformGridIndex::build(&centers, cell).unwrap();
        let k = k.min(centers.len());
        let got = index.knn(&x, k).unwrap();
        let want = brute_force_knn_points(&centers, &x, k).unwrap();
        prop_assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            prop_assert_eq!(g.dist2, w.dist2);
        }
    }

    #[test]
    fn fold_inverts_unfold(seed in 0u64..1000) {
        let t = normalize_avatar(&perturbed(seed)).unwrap();
        let back = unfold(&fold(&t, 3).unwrap()).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn region_transfer_is_idempotent(
        cells in prop::collection::vec(any::<bool>(), 16),
        sel in selector(),
        seed in 0u64..100,
    ) {
        let target = reference(0.0);
        let source = perturbed(seed);
        let mask = UVMask::new(4, 4, cells, sel).unwrap();
        let once = region_transfer(&target, &source, &mask).unwrap();
        let twice = region_transfer(&once, &source, &mask).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn disjoint_transfers_commute(
        cells in prop::collection::vec(0u8..3, 16),
        sel in selector(),
        seed in 0u64..100,
    ) {
        let target = reference(0.0);
        let b = perturbed(seed);
        let c = perturbed(seed + 1000);
        let mb = UVMask::new(4, 4, cells.iter().map(|&v| v == 1).collect(), sel).unwrap();
        let mc = UVMask::new(4, 4, cells.iter().map(|&v| v == 2).collect(), sel).unwrap();
        let bc = region_transfer(&region_transfer(&target, &b, &mb).unwrap(), &c, &mc).unwrap();
        let cb = region_transfer(&region_transfer(&target, &c, &mc).unwrap(), &b, &mb).unwrap();
        prop_assert_eq!(bc, cb);
    }

    #[test]
    fn expression_offsets_compose(
        d1 in prop::collection::vec((-0.02f64..0.02, -0.02f64..0.02, -0.02f64..0.02), 16),
        d2 in prop::collection::vec((-0.02f64..0.02, -0.02f64..0.02, -0.02f64..0.02), 16),
    ) {
        let a = reference(0.0);
        let v1: Vec<Vec3> = a.anchors.iter().zip(&d1).map(|(p, d)| p + Vec3::new(d.0, d.1, d.2)).collect();
        let v2: Vec<Vec3> = v1.iter().zip(&d2).map(|(p, d)| p + Vec3::new(d.0, d.1, d.2)).collect();
        let stepwise = apply_expression_offset(&apply_expression_offset(&a, &v1).unwrap(), &v2).unwrap();
        let direct = apply_expression_offset(&a, &v2).unwrap();
        for (s, d) in stepwise.poses.iter().zip(&direct.poses) {
            prop_assert!((s.center - d.center).norm() < 1e-12);
        }
        prop_assert_eq!(stepwise.anchors, direct.anchors);
    }

    #[test]
    fn compositing_conserves_weight(
        samples in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0)), 0..40),
        bg in (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0),
    ) {
        let mut s: Vec<(f64, f64, [f64; 3])> = samples.iter().map(|&(t, a, c)| (t, a, [c.0, c.1, c.2])).collect();
        s.sort_by(|a, b| a.0.total_cmp(&b.0));
        let bgc = [bg.0, bg.1, bg.2];
        let out = composite(&s, &bgc);
        let trans: f64 = s.iter().map(|x| 1.0 - x.1).product();
        prop_assert!((out.alpha + trans - 1.0).abs() < 1e-12);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&out.alpha));
        // A uniform color everywhere composites to itself.
        let flat: Vec<_> = s.iter().map(|&(t, a, _)| (t, a, bgc)).collect();
        let f = composite(&flat, &bgc);
        for (c, b) in f.color.iter().zip(&bgc) {
            prop_assert!((c - b).abs() < 1e-12);
        }
    }
}

#[test]
fn full_transfer_replaces_everything_selected() {
    let target = init_from_anchors(&toy_anchors(ToyKind::Sphere, 4).unwrap(), 3, 8).unwrap();
    let source = perturbed(7);
    let out = region_transfer(&target, &source, &UVMask::full(4, 4, ChannelSelector::Both)).unwrap();
    assert_eq!(out, source);
    let none = region_transfer(&target, &source, &UVMask::empty(4, 4, ChannelSelector::Both)).unwrap();
    assert_eq!(none, target);
}
