use logspline_harness::verify::run_all;

#[test]
fn every_property_check_passes_for_two_seeds() {
    for seed in [1, 99] {
        let outcomes = run_all(seed);
        assert_eq!(outcomes.len(), 8);
        for o in &outcomes {
            assert!(o.pass, "seed {seed}, check {} ({}): {}", o.id, o.name, o.detail);
        }
    }
}
