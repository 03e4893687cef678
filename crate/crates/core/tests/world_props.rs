//! Property tests for unit geometry and relation detection.

use proptest::prelude::*;
use semloft::world::{detect_relations, Relation, RelationParams, Unit};

fn arb_unit(max: i32) -> impl Strategy<Value = Unit> {
    (0..max, 0..max, 4..30i32, 4..30i32)
        .prop_map(|(x, y, w, h)| Unit::new(x, y, x + w, y + h).unwrap())
}

fn arb_units(n: usize, max: i32) -> impl Strategy<Value = Vec<Unit>> {
    prop::collection::vec(arb_unit(max), 1..=n)
}

proptest! {
    #[test]
    fn relations_are_symmetric_with_irrelevant_diagonal(units in arb_units(6, 80)) {
        let rel = detect_relations(&units, 2, &RelationParams::default());
        for p in 0..units.len() {
            prop_assert_eq!(rel.get(p, p), Relation::Irrelevant);
            for q in 0..units.len() {
                prop_assert_eq!(rel.get(p, q), rel.get(q, p));
            }
        }
    }

    #[test]
    fn relations_ignore_translation(units in arb_units(5, 60), dx in 0..40i32, dy in 0..40i32) {
        let moved: Vec<Unit> = units
            .iter()
            .map(|u| Unit::new(u.x0() + dx, u.y0() + dy, u.x1() + dx, u.y1() + dy).unwrap())
            .collect();
        let params = RelationParams::default();
        let a = detect_relations(&units, 2, &params);
        let b = detect_relations(&moved, 2, &params);
        prop_assert_eq!(a.row_major(), b.row_major());
    }

    #[test]
    fn vertex_round_trip(u in arb_unit(100)) {
        let again = Unit::from_vertices(u.vertices()).unwrap();
        prop_assert_eq!(u, again);
    }

    #[test]
    fn aspect_ratio_at_least_one(u in arb_unit(100)) {
        prop_assert!(u.aspect_ratio() >= 1.0);
        prop_assert_eq!(
            u.area_cells(),
            i64::from(u.width_cells()) * i64::from(u.height_cells())
        );
    }
}
