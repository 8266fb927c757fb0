use equiboost::checkpoint::Checkpoint;
use equiboost::graph_io::{graph_to_json, parse_graph};
use equiboost::xyz::{format_xyz, parse_xyz};
use equiboost_core::equivariant::{LearnerConfig, LearnerParams};
use equiboost_core::molgraph::Bond;
use equiboost_core::{AtomSpec, BondOrder, MolGraph};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tree(elements: &[u8], parents: &[usize], orders: &[u8]) -> MolGraph {
    let atoms = elements.iter().map(|&e| AtomSpec::new(e)).collect();
    let bonds = (1..elements.len())
        .map(|i| Bond { i: parents[i - 1] % i, j: i, order: BondOrder::from_code(orders[i - 1]).unwrap() })
        .collect();
    MolGraph::new(atoms, bonds).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn xyz_round_trip_keeps_six_decimals(
        atoms in prop::collection::vec((prop::sample::select(vec![1u8, 6, 7, 8, 9, 16, 17]), prop::array::uniform3(-500.0f64..500.0)), 1..20),
        comment in "[a-zA-Z0-9 =._-]{0,40}",
    ) {
        let elements: Vec<u8> = atoms.iter().map(|a| a.0).collect();
        let coords: Vec<[f64; 3]> = atoms.iter().map(|a| a.1).collect();
        let text = format_xyz(&elements, &coords, &comment);
        let frame = parse_xyz(&text).unwrap();
        prop_assert_eq!(&frame.elements, &elements);
        prop_assert_eq!(frame.comment.trim(), comment.trim());
        for (p, q) in frame.coords.iter().zip(&coords) {
            for k in 0..3 {
                prop_assert!((p[k] - q[k]).abs() <= 5e-7);
            }
        }
        prop_assert_eq!(format_xyz(&frame.elements, &frame.coords, &frame.comment), text);
    }

    #[test]
    fn graph_json_round_trip(
        elements in prop::collection::vec(prop::sample::select(vec![6u8, 6, 7, 8]), 2..12),
        parents in prop::collection::vec(0usize..64, 11),
        orders in prop::collection::vec(1u8..=2, 11),
    ) {
        let g = tree(&elements, &parents, &orders);
        prop_assert_eq!(parse_graph(&graph_to_json(&g)).unwrap(), g);
    }
}

#[test]
fn checkpoint_bytes_round_trip_for_several_configs() {
    for (k, blocks) in [1, 2, 3].into_iter().enumerate() {
        let config = LearnerConfig { scalar_channels: 4 * blocks, vector_channels: 2, blocks, rbf_count: 4, head_init_scale: 1.0, ..Default::default() };
        let mut params = LearnerParams::init(&config, &mut ChaCha8Rng::seed_from_u64(k as u64)).unwrap();
        params.round_to_f32();
        let ck = Checkpoint { params, optimizer: None, progress: None };
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.params, ck.params);
        assert_eq!(back.to_bytes(), bytes);
    }
}
