//! Anytime solvers that work directly on decision trees: value iteration,
//! successive approximation for a fixed policy, and modified policy
//! iteration. Every iterate is a tree over pre-action variables; nothing
//! here enumerates states, so problem size enters only through tree sizes.
//! The flat solvers in the oracle module compute the same quantities by
//! state enumeration and share these stopping rules, which is what makes
//! the two sides comparable at matching accuracy.

use thiserror::Error;

use crate::model::MdpModel;
use crate::regression::{finalize, regress, RegressionError};
use crate::trees::{merge2, DecisionTree, Variable};

/// Stop threshold on the sup-norm difference of successive value iterates
/// that guarantees the greedy result is within `epsilon` of optimal. With a
/// discount of zero a single sweep is already exact.
pub fn vi_stop_threshold(epsilon: f64, discount: f64) -> f64 {
    if discount > 0.0 {
        epsilon * (1.0 - discount) / (2.0 * discount)
    } else {
        f64::INFINITY
    }
}

/// Stop threshold for evaluating a fixed policy to within `epsilon` of its
/// true value.
pub fn policy_eval_stop_threshold(epsilon: f64, discount: f64) -> f64 {
    if discount > 0.0 {
        epsilon * (1.0 - discount) / discount
    } else {
        f64::INFINITY
    }
}

/// Policies are trees over pre-action variables whose leaves hold action
/// indices into [`MdpModel::actions`]; names are attached only at the
/// output boundary.
pub type PolicyTree = DecisionTree<usize>;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("policy names undeclared action index {0}")]
    UnknownAction(usize),
    #[error(transparent)]
    Regression(#[from] RegressionError),
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub value: DecisionTree<f64>,
    pub policy: PolicyTree,
    pub iterations: usize,
    pub converged: bool,
    /// Sup-norm change of each iterate against its predecessor, in order.
    pub sup_deltas: Vec<f64>,
}

/// Pointwise maximum of one Q-tree per action, with the maximizing action
/// recorded alongside. Exact ties go to the earliest declared action.
pub fn max_merge(
    q_trees: &[DecisionTree<f64>],
    vars: &[Variable],
) -> (DecisionTree<f64>, PolicyTree) {
    assert!(!q_trees.is_empty(), "a model declares at least one action");
    let refs: Vec<&DecisionTree<f64>> = q_trees.iter().collect();
    let value = crate::trees::merge(&refs, vars, &mut |qs: &[&f64]| {
        qs.iter().copied().copied().fold(f64::NEG_INFINITY, f64::max)
    });
    let policy = crate::trees::merge(&refs, vars, &mut |qs: &[&f64]| {
        let mut best = 0;
        for (a, &&q) in qs.iter().enumerate() {
            if q > *qs[best] {
                best = a;
            }
        }
        best
    });
    (value, policy)
}

/// Largest absolute difference between two value trees, over all states.
pub fn sup_norm_diff(
    a: &DecisionTree<f64>,
    b: &DecisionTree<f64>,
    vars: &[Variable],
) -> f64 {
    let diff = merge2(a, b, vars, &mut |x: &f64, y: &f64| (x - y).abs());
    diff.branches().into_iter().map(|(_, &d)| d).fold(0.0, f64::max)
}

fn q_trees(
    model: &MdpModel,
    value: &DecisionTree<f64>,
) -> Result<Vec<DecisionTree<f64>>, SolverError> {
    model
        .actions
        .iter()
        .map(|action| {
            let pq = regress(model, action, value)?;
            Ok(finalize(model, &pq, value, &model.reward, model.discount))
        })
        .collect()
}

/// One application of a fixed policy: each state's new value is the Q-value
/// of the action its policy region selects.
fn policy_backup(
    model: &MdpModel,
    policy: &PolicyTree,
    value: &DecisionTree<f64>,
) -> Result<DecisionTree<f64>, SolverError> {
    let used: std::collections::BTreeSet<usize> =
        policy.branches().into_iter().map(|(_, &a)| a).collect();
    let vars = &model.variables;
    let mut backed: Option<DecisionTree<f64>> = None;
    for &a in &used {
        let pq = regress(model, &model.actions[a], value)?;
        let q = finalize(model, &pq, value, &model.reward, model.discount);
        let masked =
            merge2(policy, &q, vars, &mut |&p, &qv| if p == a { qv } else { f64::NEG_INFINITY });
        backed = Some(match backed {
            None => masked,
            Some(acc) => merge2(&acc, &masked, vars, &mut |&x, &y| x.max(y)),
        });
    }
    Ok(backed.expect("a policy tree has at least one leaf"))
}

/// Structured value iteration from `V = R`. Stops once the sup-norm Bellman
/// error guarantees the greedy policy is within `epsilon` of optimal, or
/// after `max_iters` backups with the `converged` flag cleared.
pub fn value_iteration(
    model: &MdpModel,
    epsilon: f64,
    max_iters: usize,
) -> Result<SolveResult, SolverError> {
    let vars = &model.variables;
    let threshold = vi_stop_threshold(epsilon, model.discount);
    let mut value = model.reward.clone();
    let mut policy = None;
    let mut sup_deltas = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iters {
        let qs = q_trees(model, &value)?;
        let (new_value, new_policy) = max_merge(&qs, vars);
        debug_assert!(new_value.tested_vars().iter().all(|v| !v.is_post()));
        let delta = sup_norm_diff(&value, &new_value, vars);
        sup_deltas.push(delta);
        value = new_value;
        policy = Some(new_policy);
        iterations += 1;
        if delta <= threshold {
            converged = true;
            break;
        }
    }
    let policy = match policy {
        Some(p) => p,
        // Nothing ran; report the reward-greedy policy without counting it.
        None => max_merge(&q_trees(model, &value)?, vars).1,
    };
    Ok(SolveResult { value, policy, iterations, converged, sup_deltas })
}

/// Expected value of following `policy` forever, iterated from `V = R`
/// until successive sweeps differ by at most the evaluation threshold.
pub fn successive_approximation(
    model: &MdpModel,
    policy: &PolicyTree,
    epsilon: f64,
    max_iters: usize,
) -> Result<DecisionTree<f64>, SolverError> {
    if let Some((_, &a)) = policy.branches().into_iter().find(|(_, &a)| a >= model.actions.len())
    {
        return Err(SolverError::UnknownAction(a));
    }
    let vars = &model.variables;
    let threshold = policy_eval_stop_threshold(epsilon, model.discount);
    let mut value = model.reward.clone();
    for _ in 0..max_iters {
        let new_value = policy_backup(model, policy, &value)?;
        let delta = sup_norm_diff(&value, &new_value, vars);
        value = new_value;
        if delta <= threshold {
            break;
        }
    }
    Ok(value)
}

fn policies_agree(a: &PolicyTree, b: &PolicyTree, vars: &[Variable]) -> bool {
    merge2(a, b, vars, &mut |&x, &y| x == y).branches().iter().all(|(_, &same)| same)
}

/// Modified policy iteration: greedy improvement alternating with
/// `eval_steps` evaluation sweeps of the current policy. Stops when an
/// improvement step changes no policy region and the Bellman error is at
/// the value-iteration threshold; with `eval_steps = 0` the loop is plain
/// value iteration.
pub fn modified_policy_iteration(
    model: &MdpModel,
    epsilon: f64,
    eval_steps: usize,
    max_iters: usize,
) -> Result<SolveResult, SolverError> {
    let vars = &model.variables;
    let threshold = vi_stop_threshold(epsilon, model.discount);
    let mut value = model.reward.clone();
    let mut previous: Option<PolicyTree> = None;
    let mut sup_deltas = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iters {
        let qs = q_trees(model, &value)?;
        let (new_value, new_policy) = max_merge(&qs, vars);
        let delta = sup_norm_diff(&value, &new_value, vars);
        sup_deltas.push(delta);
        value = new_value;
        iterations += 1;
        let stable = previous.as_ref().is_some_and(|p| policies_agree(p, &new_policy, vars));
        previous = Some(new_policy);
        if stable && delta <= threshold {
            converged = true;
            break;
        }
        for _ in 0..eval_steps {
            let policy = previous.as_ref().expect("just set");
            value = policy_backup(model, policy, &value)?;
        }
    }
    let policy = match previous {
        Some(p) => p,
        None => max_merge(&q_trees(model, &value)?, vars).1,
    };
    Ok(SolveResult { value, policy, iterations, converged, sup_deltas })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ActionNetwork, Cpt};
    use crate::oracle::{compare, flat_policy_value, index_to_state, pre_context, state_index};
    use crate::trees::{evaluate, VariableRef};

    /// No variables at all: one state, reward 1, a self-looping action.
    fn single_state() -> MdpModel {
        MdpModel {
            variables: vec![],
            actions: vec![ActionNetwork { name: "stay".into(), cpts: vec![] }],
            reward: DecisionTree::Leaf(1.0),
            discount: 0.9,
        }
    }

    fn leaf(p: f64) -> DecisionTree<Vec<f64>> {
        DecisionTree::Leaf(vec![p, 1.0 - p])
    }

    fn node<L>(test: VariableRef, t: DecisionTree<L>, f: DecisionTree<L>) -> DecisionTree<L> {
        DecisionTree::Node { test, children: vec![t, f] }
    }

    /// Two variables, two actions, one of them with correlated effects.
    fn two_action_model() -> MdpModel {
        let x = VariableRef::pre(0);
        let y = VariableRef::pre(1);
        let x_post = VariableRef::post(0);
        let fix = ActionNetwork {
            name: "fix".into(),
            cpts: vec![
                Cpt::new(vec![x], node(x, leaf(0.9), leaf(0.5))),
                Cpt::new(vec![x_post, y], node(x_post, leaf(0.8), node(y, leaf(1.0), leaf(0.1)))),
            ],
        };
        let wait = ActionNetwork {
            name: "wait".into(),
            cpts: vec![
                Cpt::new(vec![x], node(x, leaf(1.0), leaf(0.0))),
                Cpt::new(vec![y], node(y, leaf(0.95), leaf(0.0))),
            ],
        };
        MdpModel {
            variables: vec![Variable::binary("X"), Variable::binary("Y")],
            actions: vec![fix, wait],
            reward: node(
                y,
                node(x, DecisionTree::Leaf(10.0), DecisionTree::Leaf(6.0)),
                DecisionTree::Leaf(0.0),
            ),
            discount: 0.9,
        }
    }

    #[test]
    fn self_loop_value_is_the_geometric_series() {
        let model = single_state();
        let result = value_iteration(&model, 2e-9, 10_000).unwrap();
        assert!(result.converged);
        let v = *evaluate(&result.value, &crate::trees::Context::new()).unwrap();
        assert!((v - 10.0).abs() <= 1e-9, "{v}");
        assert_eq!(*evaluate(&result.policy, &crate::trees::Context::new()).unwrap(), 0);
    }

    #[test]
    fn zero_discount_converges_in_one_iteration_to_the_reward() {
        let mut model = two_action_model();
        model.discount = 0.0;
        let result = value_iteration(&model, 1e-4, 100).unwrap();
        assert!(result.converged);
        assert_eq!(result.iterations, 1);
        assert!(crate::trees::semantic_eq(&result.value, &model.reward, 1e-12, &model.variables)
            .unwrap());
    }

    #[test]
    fn max_merge_prefers_the_earliest_action_on_ties() {
        let vars = vec![Variable::binary("X")];
        let (value, policy) =
            max_merge(&[DecisionTree::Leaf(5.0), DecisionTree::Leaf(5.0)], &vars);
        assert_eq!(value, DecisionTree::Leaf(5.0));
        assert_eq!(policy, DecisionTree::Leaf(0));
        let (value, policy) =
            max_merge(&[DecisionTree::Leaf(3.0), DecisionTree::Leaf(5.0)], &vars);
        assert_eq!(value, DecisionTree::Leaf(5.0));
        assert_eq!(policy, DecisionTree::Leaf(1));
    }

    #[test]
    fn structured_and_flat_value_iteration_agree() {
        let model = two_action_model();
        let result = value_iteration(&model, 1e-4, 10_000).unwrap();
        assert!(result.converged);
        let report =
            compare(&model, &result.value, &result.policy, 1e-4, 1e-4, 1e-6, None).unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn contraction_holds_between_consecutive_sweeps() {
        let model = two_action_model();
        let result = value_iteration(&model, 1e-6, 10_000).unwrap();
        for pair in result.sup_deltas.windows(2) {
            assert!(pair[1] <= model.discount * pair[0] + 1e-9, "{pair:?}");
        }
    }

    #[test]
    fn policy_evaluation_matches_the_flat_fixed_point() {
        let model = two_action_model();
        let policy: PolicyTree =
            node(VariableRef::pre(0), DecisionTree::Leaf(0), DecisionTree::Leaf(1));
        let value = successive_approximation(&model, &policy, 1e-6, 100_000).unwrap();
        let flat_policy: Vec<usize> = (0..4)
            .map(|i| {
                let state = index_to_state(&model.variables, i);
                *evaluate(&policy, &pre_context(&state)).unwrap()
            })
            .collect();
        let flat = flat_policy_value(&model, &flat_policy, 1e-10, 1_000_000, None).unwrap();
        for i in 0..4 {
            let state = index_to_state(&model.variables, i);
            let structured = *evaluate(&value, &pre_context(&state)).unwrap();
            let gap = (structured - flat.values[state_index(&model.variables, &state)]).abs();
            assert!(gap <= 1e-6, "state {state:?}: gap {gap}");
        }
    }

    #[test]
    fn evaluation_rejects_undeclared_actions() {
        let model = two_action_model();
        let policy: PolicyTree = DecisionTree::Leaf(7);
        assert!(matches!(
            successive_approximation(&model, &policy, 1e-4, 10),
            Err(SolverError::UnknownAction(7))
        ));
    }

    #[test]
    fn degenerate_mpi_reproduces_value_iteration_policies() {
        let model = two_action_model();
        let vi = value_iteration(&model, 1e-4, 10_000).unwrap();
        let mpi = modified_policy_iteration(&model, 1e-4, 0, 10_000).unwrap();
        assert!(mpi.converged);
        assert!(policies_agree(&vi.policy, &mpi.policy, &model.variables));
    }

    #[test]
    fn mpi_with_evaluation_sweeps_finds_an_optimal_policy() {
        let model = two_action_model();
        let mpi = modified_policy_iteration(&model, 1e-4, 5, 10_000).unwrap();
        assert!(mpi.converged);
        let report = compare(&model, &mpi.value, &mpi.policy, 1e-4, 1e-3, 1e-6, None).unwrap();
        assert!(report.policy_agrees, "{report:?}");
    }

    #[test]
    fn solver_does_not_reach_into_the_oracle() {
        let source = include_str!("solver.rs");
        let production = source.split("#[cfg(test)]").next().unwrap();
        assert!(!production.contains("use crate::oracle"));
        assert!(!production.contains("oracle::"));
    }
}
