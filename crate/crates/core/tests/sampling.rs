use proptest::prelude::*;
use trunc_core::arm::{check_well_defined, forward_kinematics, ArmGeometry};
use trunc_core::rng::{stream, Purpose};
use trunc_core::sampling::*;

fn close(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12)
}

#[test]
fn frozen_draws_match_hand_evaluation() {
    let p = SamplerParams { n: 3, ..Default::default() };
    let rows = sample_deltas(&p, &mut FrozenDraws { uniform: 0.5, index: 1 });
    assert_eq!(rows.len(), 3);
    for r in &rows {
        assert_eq!(r.delta_l_raw, -30.0);
        assert!(close(&r.dr_wrist, &[0.0, -40.0, -40.0]));
        assert!(close(&r.dr_elbow, &[0.0, -30.0, -30.0]));
        assert!(close(&r.dr_shoulder, &[0.0, -30.0, -30.0]));
        assert_eq!((r.zero_wrist, r.zero_elbow), (1, 1));
        assert!((r.offset - 12.5).abs() <= 1e-12);
        assert!((r.delta_l + 17.5).abs() <= 1e-12);
        // 3/7 of -17.5 is -7.5, 2/7 of it is -5
        assert!(close(&r.s_shoulder, &[-7.5, -37.5, -37.5]));
        assert!(close(&r.s_elbow, &[-5.0, -35.0, -35.0]));
        assert!(close(&r.s_wrist, &[-5.0, -45.0, -45.0]));
        let expect = [-7.5, -37.5, -37.5, -12.5, -72.5, -72.5, -14.375, -99.375, -99.375];
        assert!(close(&r.delta_cables, &expect), "{:?}", r.delta_cables);
    }
}

#[test]
fn zero_draws_give_home() {
    let g = ArmGeometry::default();
    let p = SamplerParams { n: 4, ..Default::default() };
    for l in sample_configs(&p, &g, &mut FrozenDraws { uniform: 0.0, index: 2 }) {
        assert_eq!(l, g.home());
    }
}

/// Hands out 0.001, 0.002, ... and cycles randi through 1, 2, 3.
struct Counter {
    u: usize,
    k: usize,
}

impl Draws for Counter {
    fn uniform(&mut self) -> f64 {
        self.u += 1;
        self.u as f64 / 1000.0
    }
    fn randi(&mut self, n: usize) -> usize {
        self.k += 1;
        (self.k - 1) % n + 1
    }
}

#[test]
fn draw_order_is_frozen() {
    let n = 4;
    let p = SamplerParams { n, ..Default::default() };
    let rows = sample_deltas(&p, &mut Counter { u: 0, k: 0 });
    let u = |i: usize| i as f64 / 1000.0;
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r.delta_l_raw, -60.0 * u(1 + i));
        // wrist rand(n,3) fills column-major after the n draws of ΔL
        let wrist: [f64; 3] = std::array::from_fn(|c| -80.0 * u(1 + n + c * n + i));
        let elbow: [f64; 3] = std::array::from_fn(|c| -60.0 * u(1 + 4 * n + c * n + i));
        let (zw, ze) = (i % 3 + 1, (n + i) % 3 + 1);
        assert_eq!((r.zero_wrist, r.zero_elbow), (zw, ze));
        for c in 0..3 {
            assert_eq!(r.dr_wrist[c], if c + 1 == zw { 0.0 } else { wrist[c] });
            assert_eq!(r.dr_elbow[c], if c + 1 == ze { 0.0 } else { elbow[c] });
        }
    }
}

#[test]
fn bounds_and_coupling_over_many_draws() {
    let p = SamplerParams { n: 100_000, ..Default::default() };
    let mut rng = stream(5, Purpose::Sampler, 0);
    let rows = sample_deltas(&p, &mut rng);
    let off_max = p.offset_max();
    for r in &rows {
        assert!(r.delta_l_raw >= -p.dl_max && r.delta_l_raw <= 0.0);
        assert!(r.offset >= 0.0 && r.offset <= off_max);
        assert!(r.delta_l >= -p.dl_max && r.delta_l <= off_max);
        assert_eq!(r.dr_shoulder, r.dr_elbow);
        for (row, max, z) in [(r.dr_wrist, p.dr_max_wrist, r.zero_wrist), (r.dr_elbow, p.dr_max_elbow, r.zero_elbow)] {
            assert!(row.iter().all(|v| *v >= -max && *v <= 0.0));
            assert_eq!(row.iter().filter(|v| **v == 0.0).count(), 1);
            assert_eq!(row[z - 1], 0.0);
        }
    }
}

#[test]
fn seeded_sampler_is_reproducible() {
    let g = ArmGeometry::default();
    let p = SamplerParams { n: 500, ..Default::default() };
    let a = sample_configs(&p, &g, &mut stream(42, Purpose::Sampler, 0));
    let b = sample_configs(&p, &g, &mut stream(42, Purpose::Sampler, 0));
    let c = sample_configs(&p, &g, &mut stream(43, Purpose::Sampler, 0));
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn invalid_params_rejected() {
    let g = ArmGeometry::default();
    for p in [
        SamplerParams { dl_max: 0.0, ..Default::default() },
        SamplerParams { alpha_comp: -1.0, ..Default::default() },
        SamplerParams { beta_wrist: 1.5, ..Default::default() },
    ] {
        assert!(matches!(generate_dataset(&p, &g, MocapNoise::NONE), Err(SamplingError::InvalidParams(_))));
    }
}

#[test]
fn noiseless_dataset_rows_are_plant_exact() {
    let g = ArmGeometry::default();
    let p = SamplerParams { n: 100, seed: 7, ..Default::default() };
    let ds = generate_dataset(&p, &g, MocapNoise::NONE).unwrap();
    assert_eq!(ds.rows.len(), 100);
    assert_eq!(ds.timestamps.len(), 100);
    assert_eq!(ds.geometry_hash, g.hash());
    for row in &ds.rows {
        assert!(check_well_defined(&g, &row.config).well_defined);
        assert_eq!(forward_kinematics(&g, &row.config).unwrap(), row.pose);
    }
}

#[test]
fn datasets_are_deterministic_and_log_resets() {
    let g = ArmGeometry::default();
    let p = SamplerParams { n: 1000, seed: 11, ..Default::default() };
    let noise = MocapNoise { sigma_pos: 0.5, sigma_ang_deg: 0.1 };
    let a = generate_dataset(&p, &g, noise).unwrap();
    let b = generate_dataset(&p, &g, noise).unwrap();
    assert_eq!(a, b);
    let resets: Vec<usize> = a
        .events
        .iter()
        .filter_map(|e| match e {
            ProtocolEvent::CompressionReset { after_rows, cycles: 5, delta_l } if *delta_l == -70.0 => Some(*after_rows),
            _ => None,
        })
        .collect();
    assert_eq!(resets, (1..10).map(|k| 100 * k).collect::<Vec<_>>());
    assert!(a.timestamps.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn paper_sized_dataset() {
    let g = ArmGeometry::default();
    let p = SamplerParams { seed: 1, ..Default::default() };
    let ds = generate_dataset(&p, &g, MocapNoise { sigma_pos: 0.5, sigma_ang_deg: 0.1 }).unwrap();
    assert_eq!(ds.rows.len(), 18_300);
    assert!(ds.dropped() <= 915);
    for row in ds.rows.iter().step_by(97) {
        assert!(check_well_defined(&g, &row.config).well_defined);
    }
}

#[test]
fn excessive_drops_abort() {
    let g = ArmGeometry { joint_bend_limit_deg: 5.0, ..Default::default() };
    let p = SamplerParams { n: 200, seed: 3, ..Default::default() };
    assert!(matches!(generate_dataset(&p, &g, MocapNoise::NONE), Err(SamplingError::DropRate { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_row_respects_bounds(seed in any::<u64>(), n in 1usize..40) {
        let p = SamplerParams { n, seed, ..Default::default() };
        for r in sample_deltas(&p, &mut stream(seed, Purpose::Sampler, 0)) {
            prop_assert_eq!(r.dr_shoulder, r.dr_elbow);
            prop_assert!(r.delta_l <= p.offset_max() && r.delta_l >= -p.dl_max);
            let sum = r.s_shoulder[0] + r.s_elbow[0];
            prop_assert!((r.delta_cables[3] - sum).abs() < 1e-12);
            prop_assert!((r.delta_cables[6] - (p.beta_wrist * sum + r.s_wrist[0])).abs() < 1e-12);
        }
    }
}
