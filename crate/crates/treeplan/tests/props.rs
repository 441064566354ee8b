//! Randomized invariants over the generator's full parameter range.

use proptest::prelude::*;

use treeplan::io::gen::{random_model, GenParams};
use treeplan::io::{parse_model, serialize_model};
use treeplan::model::validate;
use treeplan::regression::{branch_probability, regress};
use treeplan::trees::Context;

fn params() -> impl Strategy<Value = GenParams> {
    (2usize..=6, 1usize..=3, 0usize..=3, any::<u64>())
        .prop_map(|(n_vars, n_actions, max_intra_arcs, seed)| {
            GenParams::new(n_vars, n_actions, max_intra_arcs, seed)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// The textual form is a faithful round trip: parsing what we print
    /// yields a valid model that prints identically.
    #[test]
    fn serialized_models_reparse_identically(params in params()) {
        let model = random_model(&params);
        let text = serialize_model(&model);
        let reparsed = parse_model(&text).expect("generated documents parse");
        prop_assert!(validate(&reparsed).is_empty());
        prop_assert_eq!(serialize_model(&reparsed), text);
    }

    /// Whatever mix of joints and marginals a regression leaf records, the
    /// value tree's branches always partition the probability mass.
    #[test]
    fn recorded_distributions_partition_the_branch_space(params in params()) {
        let model = random_model(&params);
        let value_tree = &model.reward;
        let branches: Vec<Context> = value_tree
            .branches()
            .into_iter()
            .map(|(ctx, _)| ctx.iter().map(|(r, &x)| (r.primed(), x)).collect())
            .collect();
        for action in &model.actions {
            let pq = regress(&model, action, value_tree).expect("regression succeeds");
            for (ctx, label) in pq.branches() {
                let total: f64 =
                    branches.iter().map(|b| branch_probability(label, b)).sum();
                prop_assert!(
                    (total - 1.0).abs() <= 1e-9,
                    "action {}, branch {:?}: branch probabilities sum to {}",
                    &action.name, ctx, total
                );
            }
        }
    }
}
