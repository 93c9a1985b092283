use dynacal::graph::{
    build_edges, build_ghosts, build_graph, ghost_velocity, reflect_cylinder, reflect_plane, Boundary, BoundarySet,
    FrameState, GraphSettings, Mirror, NodeState, Normalizer, SpinProfile,
};
use dynacal::{Error, Vec3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const D: f64 = 0.1;

fn body(r: Vec3) -> NodeState {
    NodeState::physical(r, Vec3::ZERO, Vec3::ZERO, Vec3::ZERO, Vec3::ZERO)
}

fn still(r: Vec<Vec3>) -> FrameState {
    let z = vec![Vec3::ZERO; r.len()];
    FrameState { r, v: z.clone(), omega: z.clone(), v_prev: z.clone(), omega_prev: z }
}

fn settings(d_c: f64, prune: bool) -> GraphSettings {
    GraphSettings { d_c, dt: 1e-3, radius: D / 2.0, prune_ghosts: prune }
}

fn close(a: Vec3, b: Vec3, tol: f64) -> bool {
    (a - b).norm() <= tol
}

#[test]
fn spheres_inside_threshold_share_one_edge_pair() {
    let nodes = vec![body(Vec3::ZERO), body(Vec3::new(1.2 * D, 0.0, 0.0))];
    assert_eq!(build_edges(&nodes, 1.25 * D), vec![(0, 1), (1, 0)]);
}

#[test]
fn spheres_beyond_threshold_share_nothing() {
    let d_c = 1.25 * D;
    let nodes = vec![body(Vec3::ZERO), body(Vec3::new(0.0, 2.0 * d_c, 0.0))];
    assert!(build_edges(&nodes, d_c).is_empty());
}

#[test]
fn edges_match_exhaustive_pair_scan() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nodes: Vec<NodeState> = (0..5)
            .map(|_| body(Vec3::new(rng.random_range(0.0..0.3), rng.random_range(0.0..0.3), rng.random_range(0.0..0.3))))
            .collect();
        let d_c = 0.15;
        let mut expected = Vec::new();
        for i in 0..5 {
            for j in 0..5 {
                if i != j && (nodes[i].r - nodes[j].r).norm() <= d_c {
                    expected.push((i, j));
                }
            }
        }
        assert_eq!(build_edges(&nodes, d_c), expected, "seed {seed}");
    }
}

#[test]
fn plane_reflection_examples() {
    assert_eq!(reflect_plane(Vec3::Z, Vec3::ZERO, Vec3::Z), -Vec3::Z);
    let on = Vec3::new(0.3, -0.2, 0.0);
    assert_eq!(reflect_plane(on, Vec3::ZERO, Vec3::Z), on);
    let offset = reflect_plane(Vec3::new(0.1, 0.2, 0.9), Vec3::new(0.0, 0.0, 1.0), Vec3::Z);
    assert!(close(offset, Vec3::new(0.1, 0.2, 1.1), 1e-15));
}

#[test]
fn radial_ghost_lies_mirror_distance_beyond_wall() {
    let c = Boundary::cylinder(Vec3::ZERO, Vec3::Z, 1.0, 2.0, false);
    let ghosts = reflect_cylinder(Vec3::new(0.5, 0.0, 0.0), &c).unwrap();
    assert_eq!(ghosts.len(), 1);
    assert!(close(ghosts[0], Vec3::new(1.5, 0.0, 0.0), 1e-15));
}

#[test]
fn capped_cylinder_gives_three_ghosts_and_rejects_axis_points() {
    let h = 2.0;
    let c = Boundary::cylinder(Vec3::ZERO, Vec3::Z, 1.0, h, true);
    let ghosts = reflect_cylinder(Vec3::new(0.25, 0.0, 0.5), &c).unwrap();
    assert_eq!(ghosts.len(), 3);
    assert!(close(ghosts[0], Vec3::new(1.75, 0.0, 0.5), 1e-15));
    assert!(close(ghosts[1], Vec3::new(0.25, 0.0, -0.5), 1e-15));
    assert!(close(ghosts[2], Vec3::new(0.25, 0.0, 2.0 * h - 0.5), 1e-15));

    let axis_point = Vec3::new(0.0, 0.0, h / 2.0);
    assert!(matches!(reflect_cylinder(axis_point, &c), Err(Error::DegenerateReflection(_))));
    let caps: Vec<Vec3> = c.mirrors()[1..].iter().map(|m| m.apply(axis_point)).collect();
    assert!(close(caps[0], Vec3::new(0.0, 0.0, -h / 2.0), 1e-15));
    assert!(close(caps[1], Vec3::new(0.0, 0.0, 3.0 * h / 2.0), 1e-15));
}

#[test]
fn stationary_wall_ghosts_are_at_rest() {
    let b = Boundary::plane(Vec3::ZERO, -Vec3::Z);
    assert_eq!(ghost_velocity(Vec3::new(0.1, 0.2, -0.3), &b, 0.7), (Vec3::ZERO, Vec3::ZERO));
}

#[test]
fn spinning_drum_ghost_moves_with_d_cross_omega() {
    let (rp, w) = (0.3, 2.0);
    let drum = |w: f64| Boundary::cylinder(Vec3::ZERO, Vec3::Z, 0.25, 1.0, true).with_spin(SpinProfile::constant(w));
    let (v, omega) = ghost_velocity(Vec3::new(rp, 0.0, 0.4), &drum(w), 0.0);
    assert!(close(v, Vec3::new(0.0, -rp * w, 0.0), 1e-15));
    assert!(close(omega, Vec3::new(0.0, 0.0, w), 1e-15));
    let (v2, _) = ghost_velocity(Vec3::new(rp, 0.0, 0.4), &drum(2.0 * w), 0.0);
    assert!((v2.norm() - 2.0 * v.norm()).abs() < 1e-15);
}

#[test]
fn ghost_counts_per_wall_set() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let nodes: Vec<NodeState> = (0..7)
        .map(|_| body(Vec3::new(rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9))))
        .collect();
    let cube = BoundarySet::cuboid(Vec3::ZERO, Vec3::new(1.0, 1.0, 1.0));
    assert_eq!(build_ghosts(&nodes, &cube, 0.1, false, 0.0).len(), 7 + 6 * 7);
    let floor = BoundarySet::new(vec![Boundary::plane(Vec3::ZERO, -Vec3::Z)]);
    assert_eq!(build_ghosts(&nodes, &floor, 0.1, false, 0.0).len(), 7 + 7);
    let drum = BoundarySet::new(vec![Boundary::cylinder(Vec3::new(0.5, 0.5, 0.0), Vec3::Z, 1.0, 1.0, true)]);
    assert_eq!(build_ghosts(&nodes, &drum, 0.1, false, 0.0).len(), 7 + 3 * 7);
}

#[test]
fn centred_node_with_short_threshold_has_no_ghost_edges() {
    let cube = BoundarySet::cuboid(Vec3::ZERO, Vec3::new(1.0, 1.0, 1.0));
    let state = still(vec![Vec3::new(0.5, 0.5, 0.5)]);
    let g = build_graph(&state, &cube, &settings(0.1, true), 0.0).unwrap();
    assert_eq!(g.ghost_count(), 0);
    assert!(g.edges.is_empty());
    let unpruned = build_graph(&state, &cube, &settings(0.1, false), 0.0).unwrap();
    assert_eq!(unpruned.ghost_count(), 6);
    assert!(unpruned.edges.is_empty());
}

#[test]
fn ghosts_wire_only_to_their_hosts() {
    let floor = BoundarySet::new(vec![Boundary::plane(Vec3::ZERO, -Vec3::Z)]);
    let state = still(vec![Vec3::new(0.0, 0.0, 0.05), Vec3::new(0.06, 0.0, 0.05)]);
    let g = build_graph(&state, &floor, &settings(1.0, false), 0.0).unwrap();
    g.validate().unwrap();
    assert_eq!(g.edges, vec![(0, 1), (0, 2), (1, 0), (1, 3), (2, 0), (3, 1)]);
}

#[test]
fn normalizer_scales_velocity_and_spin_but_not_positions() {
    let floor = BoundarySet::new(vec![Boundary::plane(Vec3::ZERO, -Vec3::Z)]);
    let state = FrameState {
        r: vec![Vec3::new(0.0, 0.0, 0.04)],
        v: vec![Vec3::new(0.0, 2.0, 0.0)],
        omega: vec![Vec3::ZERO],
        v_prev: vec![Vec3::ZERO],
        omega_prev: vec![Vec3::new(5.0, 0.0, 0.0)],
    };
    let g = build_graph(&state, &floor, &settings(0.1, true), 0.0).unwrap();
    let norm = Normalizer { v: 2.0, omega: 5.0, ..Normalizer::default() };
    let n = norm.normalize(&g).unwrap();
    assert_eq!(n.nodes[0].v.norm(), 1.0);
    assert_eq!(n.nodes[0].omega_prev.norm(), 1.0);
    assert_eq!(n.nodes[0].v_prev, Vec3::ZERO);
    assert_eq!(n.nodes[0].omega, Vec3::ZERO);
    assert_eq!(n.nodes[0].r, g.nodes[0].r);
    assert_eq!(n.nodes[1].r, g.nodes[1].r);
    assert!(n.normalized);
    assert!(norm.normalize(&n).is_err());
    assert!(Normalizer { v: 0.0, ..Normalizer::default() }.normalize(&g).is_err());
}

#[test]
fn boundary_file_round_trips_and_rejects_bad_walls() {
    let set = BoundarySet::new(vec![
        Boundary::plane(Vec3::ZERO, -Vec3::Z),
        Boundary::cylinder(Vec3::ZERO, Vec3::X, 0.2, 0.3, true).with_spin(SpinProfile(vec![[0.0, 0.0], [1.0, 3.0]])),
    ]);
    let text = set.to_toml().unwrap();
    assert_eq!(BoundarySet::from_toml(&text).unwrap(), set);
    let tilted = "[[boundary]]\nkind = \"plane\"\npoint = [0.0, 0.0, 0.0]\nnormal = [0.0, 0.0, 2.0]\n";
    assert!(BoundarySet::from_toml(tilted).is_err());
    let flat = "[[boundary]]\nkind = \"cylinder\"\naxis_point = [0.0, 0.0, 0.0]\naxis = [0.0, 0.0, 1.0]\nradius = 0.0\nlength = 1.0\n";
    assert!(BoundarySet::from_toml(flat).is_err());
}

fn vec3(range: f64) -> impl Strategy<Value = Vec3> {
    (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn unit() -> impl Strategy<Value = Vec3> {
    vec3(1.0).prop_filter("non-degenerate", |v| v.norm() > 0.1).prop_map(|v| v / v.norm())
}

proptest! {
    #[test]
    fn plane_reflection_is_an_involution_along_the_normal(r in vec3(2.0), p in vec3(2.0), n in unit()) {
        let g = reflect_plane(r, p, n);
        prop_assert!(close(reflect_plane(g, p, n), r, 1e-12));
        let seg = g - r;
        if seg.norm() > 1e-9 {
            prop_assert!((seg.dot(n).abs() / seg.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn radial_reflection_is_its_own_inverse(r in vec3(0.9), axis in unit()) {
        let m = Mirror::Radial { axis_point: Vec3::new(0.1, -0.2, 0.3), axis, radius: 1.0 };
        let rel = r - Vec3::new(0.1, -0.2, 0.3);
        prop_assume!((rel - axis * axis.dot(rel)).norm() > 0.05);
        let g = m.apply(r);
        prop_assert!(close(m.apply(g), r, 1e-12));
    }

    #[test]
    fn built_graphs_are_symmetric_and_pruning_keeps_near_ghosts(
        pts in prop::collection::vec(vec3(0.5), 1..12),
        d_c in 0.05f64..0.4,
    ) {
        let r: Vec<Vec3> = pts.iter().map(|p| *p + Vec3::new(0.5, 0.5, 0.5)).collect();
        let walls = BoundarySet::cuboid(Vec3::ZERO, Vec3::new(1.0, 1.0, 1.0));
        let full = build_graph(&still(r.clone()), &walls, &settings(d_c, false), 0.0).unwrap();
        let pruned = build_graph(&still(r), &walls, &settings(d_c, true), 0.0).unwrap();
        full.validate().unwrap();
        pruned.validate().unwrap();
        prop_assert!(full.ghost_count() <= 6 * full.physical_count());
        let near = full.nodes.iter().filter(|n| n.ghost.is_some_and(|l| (n.r - full.nodes[l.host].r).norm() <= d_c)).count();
        prop_assert_eq!(pruned.ghost_count(), near);
        for &(s, t) in &pruned.edges {
            prop_assert!((pruned.nodes[s].r - pruned.nodes[t].r).norm() <= d_c);
        }
    }
}
