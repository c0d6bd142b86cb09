use proptest::prelude::*;
use warpkit::grid::OcclusionMask;
use warpkit::selftest::check_mask_rule;

fn mask_strategy() -> impl Strategy<Value = OcclusionMask> {
    (1usize..40, 1usize..40)
        .prop_flat_map(|(w, h)| (Just(w), Just(h), proptest::collection::vec(prop::bool::weighted(0.08), w * h)))
        .prop_map(|(w, h, holes)| OcclusionMask::new(w, h, holes).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn every_component_reaches_min_size(mask in mask_strategy(), min_size in 1usize..12) {
        if let Err(e) = check_mask_rule(&mask, min_size) {
            return Err(TestCaseError::fail(e));
        }
    }
}
