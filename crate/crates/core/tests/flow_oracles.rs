use sit_core::metrics::{ewarp, psnr};
use sit_core::synth::{generate, ground_truth_flow, GeneratorConfig, GeneratorKind};
use sit_core::{chain_warp, estimate_flow, warp, FlowField};

fn shifted_pair(vx: f64, vy: f64) -> (GeneratorConfig, sit_core::FrameSequence) {
    let cfg = GeneratorConfig::new(GeneratorKind::Translating { vx, vy }, 96, 96, 2).with_seed(21);
    let seq = generate(&cfg).unwrap();
    (cfg, seq)
}

#[test]
fn recovers_known_shifts() {
    for (vx, vy) in [(3.0, 0.0), (0.0, -2.0)] {
        let (cfg, seq) = shifted_pair(vx, vy);
        let flow = estimate_flow(seq.frame(0), seq.frame(1), 3).unwrap();
        let (mx, my) = flow.interior_mean(10);
        let (gx, gy) = ground_truth_flow(&cfg, 0).unwrap().interior_mean(10);
        assert_eq!((gx, gy), (vx, vy));
        assert!((mx - vx).abs() <= 0.5 && (my - vy).abs() <= 0.5, "({mx}, {my}) for ({vx}, {vy})");
    }
}

#[test]
fn identical_generated_frames_give_near_zero_flow() {
    let seq = generate(&GeneratorConfig::new(GeneratorKind::Static, 64, 64, 2)).unwrap();
    let flow = estimate_flow(seq.frame(0), seq.frame(1), 3).unwrap();
    assert!(flow.max_abs() <= 0.05);
}

#[test]
fn chain_of_zero_flows_is_identity() {
    let (_, seq) = shifted_pair(1.0, 1.0);
    let f = seq.frame(0);
    let zeros = vec![FlowField::zeros(f.width(), f.height()); 5];
    assert_eq!(&chain_warp(f, &zeros).unwrap(), f);
    assert_eq!(&warp(f, &zeros[0]).unwrap(), f);
}

#[test]
fn chain_quality_falls_with_length() {
    let cfg = GeneratorConfig::new(GeneratorKind::translating(), 64, 64, 7).with_seed(4);
    let seq = generate(&cfg).unwrap();
    let flows: Vec<FlowField> = (1..seq.len()).map(|k| estimate_flow(seq.frame(k - 1), seq.frame(k), 3).unwrap()).collect();
    let mut last = f64::INFINITY;
    for k in 1..seq.len() {
        let p = psnr(&chain_warp(seq.frame(0), &flows[..k]).unwrap(), seq.frame(k)).unwrap();
        assert!(p <= last, "k={k}: {p} > {last}");
        last = p;
    }
}

#[test]
fn ewarp_of_static_scene_is_zero() {
    let seq = generate(&GeneratorConfig::new(GeneratorKind::Static, 48, 48, 4)).unwrap();
    assert!(ewarp(&seq).unwrap() <= 1e-6);
}
