use std::f64::consts::{FRAC_PI_4, PI, TAU};
use std::time::Instant;

use nalgebra::{DMatrix, Isometry3, Vector3};
use proptest::prelude::*;
use trunc_core::geometry::*;
use trunc_core::mechanism::*;

fn cell(truss: bool, n: usize) -> LinkageGraph {
    if truss {
        build_cell(&CellSpec::truss(n, 28.0)).unwrap()
    } else {
        build_cell(&CellSpec::equatorial(n, 44.0)).unwrap()
    }
}

fn rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let top = sv.max();
    sv.iter().filter(|&&s| s > 1e-8 * top).count()
}

#[test]
fn equatorial_modes_are_extension_and_bending() {
    let g = cell(false, 4);
    let t = Instant::now();
    let s = mobility_analysis(&g).unwrap();
    assert!(t.elapsed().as_secs_f64() < 10.0);
    assert_eq!(s.count(ModeLabel::Extension), 1);
    assert_eq!(s.count(ModeLabel::Bending), 2);
    assert_eq!(s.count(ModeLabel::Shear), 0);
    assert_eq!(s.count(ModeLabel::Twist), 0);
    assert_eq!(s.count(ModeLabel::Other), 0);
    assert!(s.twist_projection < 1e-6);
    assert!(s.twist_is_stiff());
    assert_eq!(s.rigid_count, 6);
}

#[test]
fn truss_modes_add_shear() {
    let s = mobility_analysis(&cell(true, 4)).unwrap();
    assert_eq!(s.count(ModeLabel::Extension), 1);
    assert_eq!(s.count(ModeLabel::Bending), 2);
    assert_eq!(s.count(ModeLabel::Shear), 2);
    assert_eq!(s.count(ModeLabel::Twist), 0);
    assert!(s.twist_is_stiff());
}

#[test]
fn mode_structure_holds_across_fold_counts() {
    for n in 2..=8 {
        for truss in [false, true] {
            let s = mobility_analysis(&cell(truss, n)).unwrap();
            assert_eq!(s.count(ModeLabel::Extension), 1, "n={n} truss={truss}");
            assert_eq!(s.count(ModeLabel::Bending), 2, "n={n} truss={truss}");
            assert_eq!(s.count(ModeLabel::Shear), if truss { 2 } else { 0 }, "n={n} truss={truss}");
            assert!(s.twist_is_stiff());
        }
    }
}

#[test]
fn expanded_cells_keep_their_mode_structure() {
    let g = cell(false, 5);
    let e = expand_cell(&g, 0.6 * g.gamma_max).unwrap();
    let s = mobility_analysis(&e).unwrap();
    assert_eq!(s.count(ModeLabel::Extension), 1);
    assert_eq!(s.count(ModeLabel::Bending), 2);
    assert!(s.twist_is_stiff());
}

#[test]
fn extension_mode_changes_the_radius() {
    let g = cell(false, 4);
    let s = mobility_analysis(&g).unwrap();
    let ext = s.modes.iter().find(|m| m.label == ModeLabel::Extension).unwrap();
    assert!(ext.vector.last().unwrap().abs() > 1e-3);
}

#[test]
fn twist_test_vector_violates_constraints() {
    let g = cell(false, 4);
    let s = mobility_analysis(&g).unwrap();
    let fit = cell_radius(&g).unwrap();
    let j = constraint_jacobian(&g, Vector3::from(fit.center), fit.radius);
    let t = twist_test_vector(&g);
    assert!((&j * &t).norm() > 1e-3 * s.sigma_max());
}

#[test]
fn unlinked_graph_is_all_soft() {
    let mut g = cell(false, 4);
    g.links.clear();
    let s = mobility_analysis(&g).unwrap();
    let n = g.nodes.len();
    let fit = cell_radius(&g).unwrap();
    let j = constraint_jacobian(&g, Vector3::from(fit.center), fit.radius);
    // every direction outside the sphere constraints and rigid motions
    assert_eq!(s.modes.len(), 3 * n + 4 - rank(&j) - 6);
    assert_eq!(s.modes.len(), 2 * n - 2);
}

#[test]
fn duplicate_nodes_rejected() {
    let mut g = cell(false, 3);
    g.nodes[5] = g.nodes[4];
    assert!(matches!(mobility_analysis(&g), Err(MechanismError::DuplicateNodes(4, 5))));
}

#[test]
fn singular_values_sorted_non_negative() {
    let s = mobility_analysis(&cell(true, 3)).unwrap();
    assert!(s.singular_values.windows(2).all(|w| w[0] >= w[1]));
    assert!(s.singular_values.iter().all(|&v| v >= 0.0));
    assert_eq!(s.singular_values.len(), 3 * 32 + 4);
}

#[test]
fn bending_pairs_are_degenerate() {
    for n in 3..=6 {
        let s = mobility_analysis(&cell(false, n)).unwrap();
        let b: Vec<f64> = s.modes.iter().filter(|m| m.label == ModeLabel::Bending).map(|m| m.sv).collect();
        assert_eq!(b.len(), 2);
        assert!((b[0] - b[1]).abs() <= 1e-6 * s.sigma_max());
    }
}

#[test]
fn anchoring_removes_exactly_the_rigid_null_space() {
    let g = cell(true, 4);
    let fit = cell_radius(&g).unwrap();
    let c = Vector3::from(fit.center);
    let j = constraint_jacobian(&g, c, fit.radius);
    let rigid = rigid_motions(&g, c);
    assert!((&j * &rigid).amax() < 1e-9);
    let cols = j.ncols();
    let anchored = DMatrix::from_fn(j.nrows() + 6, cols, |r, k| if r < j.nrows() { j[(r, k)] } else { rigid[(k, r - j.nrows())] });
    let free = cols - rank(&j);
    let free_anchored = cols - rank(&anchored);
    assert_eq!(free - free_anchored, 6);
    let s = mobility_analysis(&g).unwrap();
    assert_eq!(free_anchored, s.modes.len());
}

#[test]
fn mode_report_json_shape() {
    let r = mobility_analysis(&cell(false, 4)).unwrap().report();
    let v = serde_json::to_value(&r).unwrap();
    assert!(v["twist_is_stiff"].as_bool().unwrap());
    assert_eq!(v["soft_modes"].as_array().unwrap().len(), 3);
    assert!(v["soft_modes"][0]["label"].is_string());
}

#[test]
fn cv_examples() {
    assert_eq!(cv_transfer(&JointState::neutral(), 1.0).unwrap(), 1.0);
    assert_eq!(cv_transfer(&JointState::new(FRAC_PI_4, 0.3, 10.0), 3.0).unwrap(), 3.0);
    let wrapped = cv_transfer(&JointState::new(PI / 6.0, 0.0, 0.0), TAU + 0.5).unwrap();
    assert!((wrapped - 0.5).abs() < 1e-12);
    assert!(matches!(
        cv_transfer(&JointState::new(0.8, 0.0, 0.0), 1.0),
        Err(MechanismError::OutOfEnvelope { .. })
    ));
    assert!(cv_transfer(&JointState::neutral(), f64::NAN).is_err());
}

#[test]
fn neutral_chain_offsets_along_z() {
    let chain = CouplingChain::neutral(7, 710.0);
    let p = chain_pose(&chain).unwrap();
    assert!((p.translation.vector - Vector3::new(0.0, 0.0, 710.0)).norm() < 1e-9);
    assert!(p.rotation.angle() < 1e-12);
}

#[test]
fn two_half_right_bends_make_the_axis_horizontal() {
    let chain = CouplingChain::new(vec![JointState::new(FRAC_PI_4, 0.7, 0.0); 2], 50.0);
    let p = chain_pose(&chain).unwrap();
    let z = p.rotation * Vector3::z();
    assert!(z.z.abs() < 1e-12);
    assert!((z - Vector3::new(0.7f64.cos(), 0.7f64.sin(), 0.0)).norm() < 1e-12);
}

#[test]
fn single_joint_matches_hand_formula() {
    let (b, h, d) = (0.6f64, 40.0, 4.0);
    let chain = CouplingChain::new(vec![JointState::new(b, 0.0, d)], h);
    let p = chain_pose(&chain).unwrap();
    let half = 0.5 * (h + d);
    let expect = Vector3::new(half * b.sin(), 0.0, half + half * b.cos());
    assert!((p.translation.vector - expect).norm() < 1e-12);
}

#[test]
fn rigidity_examples() {
    assert_eq!(rigidity_under_extension(0.0).unwrap(), 1.0);
    assert_eq!(rigidity_under_extension(0.20).unwrap(), 0.836);
    let mid = rigidity_under_extension(0.10).unwrap();
    assert!(mid > 0.836 && mid < 1.0);
    assert!(rigidity_under_extension(0.3).is_err());
    assert!(rigidity_under_extension(-0.01).is_err());
}

#[test]
fn cross_coupling_examples() {
    let chain = CouplingChain::neutral(3, 100.0);
    let mut nested = NestedCoupling::new(chain.clone(), chain.clone(), 0.0).unwrap();
    assert_eq!(nested_cross_coupling(&nested, 100.0).unwrap(), 0.0);
    nested.friction_coupling = 0.005;
    assert!((nested_cross_coupling(&nested, 200.0).unwrap() - 1.0).abs() < 1e-12);
    assert!(matches!(nested_cross_coupling(&nested, -1.0), Err(MechanismError::NegativeTorque(_))));
    let inner = NestedCoupling::inner_driven(chain.clone());
    assert!(nested_cross_coupling(&inner, TRUSS_TORQUE_CAPACITY).unwrap() < 2.5);
    let outer = NestedCoupling::outer_driven(chain.clone());
    assert!(nested_cross_coupling(&outer, EQUATORIAL_TORQUE_CAPACITY).unwrap() < 2.5);
    let mut bent = chain.clone();
    bent.joints[1].bend_angle = 0.2;
    assert!(NestedCoupling::new(chain, bent, 0.01).is_err());
}

#[test]
fn nested_columns_rotate_independently() {
    let joints = vec![JointState::new(0.3, 1.0, 2.0); 4];
    let mut nested = NestedCoupling::inner_driven(CouplingChain::new(joints, 30.0));
    let a = nested.inner.propagate(1.25).unwrap();
    let b = nested.outer.propagate(4.0).unwrap();
    assert_eq!((a, b), (1.25, 4.0));
    assert_eq!(chain_pose(&nested.inner).unwrap(), chain_pose(&nested.outer).unwrap());
}

fn joint_strategy() -> impl Strategy<Value = JointState> {
    (-FRAC_PI_4..=FRAC_PI_4, 0.0..TAU, -20.0f64..20.0).prop_map(|(b, a, e)| JointState::new(b, a, e))
}

proptest! {
    #[test]
    fn cv_is_identity(state in joint_strategy(), phase in 0.0..TAU) {
        prop_assert_eq!(cv_transfer(&state, phase).unwrap(), phase);
    }

    #[test]
    fn chained_cv_is_identity(joints in prop::collection::vec(joint_strategy(), 1..10), phase in 0.0..TAU) {
        let mut chain = CouplingChain::new(joints, 25.0);
        prop_assert_eq!(chain.propagate(phase).unwrap(), phase);
        prop_assert!(chain.joints.iter().all(|j| j.output_phase == j.input_phase));
    }

    #[test]
    fn chain_pose_is_associative(joints in prop::collection::vec(joint_strategy(), 2..9), cut in 1usize..8) {
        let cut = cut.min(joints.len() - 1);
        let full = chain_pose(&CouplingChain::new(joints.clone(), 30.0)).unwrap();
        let head = chain_pose(&CouplingChain::new(joints[..cut].to_vec(), 30.0)).unwrap();
        let tail = chain_pose(&CouplingChain::new(joints[cut..].to_vec(), 30.0)).unwrap();
        let composed: Isometry3<f64> = head * tail;
        prop_assert!((composed.translation.vector - full.translation.vector).norm() < 1e-9);
        prop_assert!(composed.rotation.angle_to(&full.rotation) < 1e-9);
    }

    #[test]
    fn rigidity_is_monotone(a in 0.0f64..=0.25, b in 0.0f64..=0.25) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(rigidity_under_extension(lo).unwrap() >= rigidity_under_extension(hi).unwrap());
    }
}
