mod common;

#[test]
fn matches_breadth_first_search_on_random_grids() {
    let rep = common::lattice::run(50, 11);
    assert!(rep.mismatches.is_empty(), "{:#?}", rep.mismatches);
    assert!(rep.solved >= 25, "only {} solvable maps ({} unsolvable)", rep.solved, rep.unsolvable);
}
