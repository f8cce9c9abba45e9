use uvhead::fit::{fit_scene, initial_state, FitConfig, FitMode, View};
use uvhead::io::{toy_scene, ToyKind, ToySpec};
use uvhead::AnchorGrid;

fn scene() -> (Vec<View>, AnchorGrid) {
    let spec = ToySpec {
        views: 4,
        resolution: 16,
        grid: 6,
        payload_res: 4,
        ..ToySpec::new(ToyKind::CheckerSphere)
    };
    let s = toy_scene(&spec).unwrap();
    (s.views(), s.anchors)
}

fn config(iterations: usize) -> FitConfig {
    FitConfig {
        iterations,
        patch_size: 8,
        res: 4,
        ..FitConfig::default()
    }
}

#[test]
fn zero_iterations_returns_initial_state() {
    let (views, anchors) = scene();
    for mode in [FitMode::Direct, FitMode::Latent] {
        let cfg = FitConfig { mode, ..config(0) };
        let out = fit_scene(&views, &anchors, &cfg).unwrap();
        let (mut avatar, mlp, decoder) = initial_state(&anchors, &cfg).unwrap();
        if let Some(d) = &decoder {
            avatar.payloads = d.decode_payloads(avatar.height, avatar.width).unwrap();
        }
        assert!(out.history.is_empty());
        assert_eq!(out.avatar, avatar);
        assert_eq!(out.mlp, mlp);
        assert_eq!(out.decoder, decoder);
    }
}

#[test]
fn fixed_seed_is_bit_reproducible() {
    let (views, anchors) = scene();
    let a = fit_scene(&views, &anchors, &config(15)).unwrap();
    let b = fit_scene(&views, &anchors, &config(15)).unwrap();
    let bits = |h: &[f64]| h.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.history), bits(&b.history));
    assert_eq!(a.avatar, b.avatar);
    let c = fit_scene(&views, &anchors, &FitConfig { seed: 1, ..config(15) }).unwrap();
    assert_ne!(bits(&a.history), bits(&c.history));
}

#[test]
fn windowed_loss_does_not_increase() {
    let (views, anchors) = scene();
    let out = fit_scene(&views, &anchors, &config(400)).unwrap();
    let means: Vec<f64> = out.history.chunks(100).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect();
    for pair in means.windows(2) {
        assert!(pair[1] <= pair[0], "window means {means:?}");
    }
}

#[test]
fn strong_mesh_prior_pins_centers_to_anchors() {
    let (views, anchors) = scene();
    let drift = |mesh: f64| {
        let mut cfg = config(150);
        cfg.weights.mesh = mesh;
        let out = fit_scene(&views, &anchors, &cfg).unwrap();
        out.avatar
            .poses
            .iter()
            .zip(&anchors.positions)
            .map(|(p, a)| (p.center - a).norm())
            .fold(0.0, f64::max)
    };
    let free = drift(0.0);
    let pinned = drift(1e6);
    assert!(pinned < 0.1 * free, "free {free:.3e}, pinned {pinned:.3e}");
}
