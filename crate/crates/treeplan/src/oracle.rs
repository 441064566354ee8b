//! Flat reference implementations that enumerate the state space outright:
//! transition distributions by chain rule, value iteration and policy
//! evaluation over explicit state vectors, and a brute-force conditional
//! independence check. Everything here is meant for cross-checking the
//! tree-based code on small models, so clarity wins over speed and state
//! spaces are capped.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::model::{post_action_ordering, ActionNetwork, MdpModel, ModelError};
use crate::solver::{policy_eval_stop_threshold, vi_stop_threshold};
use crate::trees::{evaluate, Context, DecisionTree, TreeError, Variable, VariableRef};

/// One assignment of every variable, by domain value index.
pub type FlatState = Vec<usize>;

/// Flat solves refuse to enumerate more states than this unless told
/// otherwise.
pub const DEFAULT_STATE_BOUND: usize = 1 << 20;

/// Tolerance for the brute-force independence check.
pub const CI_TOL: f64 = 1e-9;

/// Cap on joint assignments enumerated by [`brute_force_ci`].
pub const CI_ENUM_BOUND: usize = 1 << 24;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("state space exceeds the {0}-state bound for flat enumeration")]
    StateSpaceTooLarge(usize),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Context assigning every pre-action variable from a flat state.
pub fn pre_context(state: &FlatState) -> Context {
    state
        .iter()
        .enumerate()
        .map(|(i, &v)| (VariableRef::pre(i), v))
        .collect()
}

pub fn state_index(vars: &[Variable], state: &FlatState) -> usize {
    state
        .iter()
        .zip(vars)
        .fold(0, |acc, (&v, var)| acc * var.values.len() + v)
}

pub fn index_to_state(vars: &[Variable], mut index: usize) -> FlatState {
    let mut state = vec![0; vars.len()];
    for i in (0..vars.len()).rev() {
        let d = vars[i].values.len();
        state[i] = index % d;
        index /= d;
    }
    state
}

/// Successor distribution of one action from one state, as a sparse list of
/// (post state, probability) pairs with positive probability.
///
/// Variables are sampled parents-first, so by the time a distribution tree
/// is evaluated everything it may test is already assigned.
pub fn flat_transition(
    action: &ActionNetwork,
    pre: &FlatState,
) -> Result<Vec<(FlatState, f64)>, OracleError> {
    let mut order = post_action_ordering(action)?;
    order.reverse();
    let mut ctx = pre_context(pre);
    let mut post = vec![0usize; action.cpts.len()];
    let mut out = Vec::new();
    expand(action, &order, 0, &mut ctx, &mut post, 1.0, &mut out)?;
    Ok(out)
}

fn expand(
    action: &ActionNetwork,
    order: &[usize],
    depth: usize,
    ctx: &mut Context,
    post: &mut FlatState,
    prob: f64,
    out: &mut Vec<(FlatState, f64)>,
) -> Result<(), OracleError> {
    if depth == order.len() {
        out.push((post.clone(), prob));
        return Ok(());
    }
    let x = order[depth];
    let dist = evaluate(&action.cpts[x].tree, ctx)?.clone();
    for (value, &p) in dist.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        ctx.insert(VariableRef::post(x), value);
        post[x] = value;
        expand(action, order, depth + 1, ctx, post, prob * p, out)?;
        ctx.remove(&VariableRef::post(x));
    }
    Ok(())
}

/// One-step lookahead value of `action` from `pre` against the state values
/// in `values`.
pub fn flat_q(
    model: &MdpModel,
    action: &ActionNetwork,
    pre: &FlatState,
    values: &[f64],
) -> Result<f64, OracleError> {
    let reward = *evaluate(&model.reward, &pre_context(pre))?;
    let mut expected = 0.0;
    for (succ, p) in flat_transition(action, pre)? {
        expected += p * values[state_index(&model.variables, &succ)];
    }
    Ok(reward + model.discount * expected)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlatSolution {
    pub values: Vec<f64>,
    pub policy: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
}

fn checked_state_count(model: &MdpModel, bound: usize) -> Result<usize, OracleError> {
    model
        .state_count()
        .filter(|&s| s <= bound)
        .ok_or(OracleError::StateSpaceTooLarge(bound))
}

/// Sparse transition matrix per action: successor state indices and
/// probabilities for every state.
fn transition_table(
    model: &MdpModel,
    states: usize,
) -> Result<Vec<Vec<Vec<(usize, f64)>>>, OracleError> {
    let mut table = Vec::with_capacity(model.actions.len());
    for action in &model.actions {
        let mut rows = Vec::with_capacity(states);
        for idx in 0..states {
            let pre = index_to_state(&model.variables, idx);
            let row = flat_transition(action, &pre)?
                .into_iter()
                .map(|(succ, p)| (state_index(&model.variables, &succ), p))
                .collect();
            rows.push(row);
        }
        table.push(rows);
    }
    Ok(table)
}

fn reward_table(model: &MdpModel, states: usize) -> Result<Vec<f64>, OracleError> {
    (0..states)
        .map(|idx| {
            let pre = index_to_state(&model.variables, idx);
            Ok(*evaluate(&model.reward, &pre_context(&pre))?)
        })
        .collect()
}

/// Value iteration over the explicit state space, stopping when the greedy
/// policy is within `epsilon` of optimal. Ties between actions go to the
/// earliest declared one.
pub fn flat_value_iteration(
    model: &MdpModel,
    epsilon: f64,
    max_iterations: usize,
    state_bound: Option<usize>,
) -> Result<FlatSolution, OracleError> {
    let states = checked_state_count(model, state_bound.unwrap_or(DEFAULT_STATE_BOUND))?;
    let transitions = transition_table(model, states)?;
    let rewards = reward_table(model, states)?;
    let threshold = vi_stop_threshold(epsilon, model.discount);

    let mut values = rewards.clone();
    let mut policy = vec![0; states];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iterations {
        iterations += 1;
        let mut next = vec![0.0; states];
        let mut delta: f64 = 0.0;
        for s in 0..states {
            let mut best_q = f64::NEG_INFINITY;
            let mut best_a = 0;
            for (a, rows) in transitions.iter().enumerate() {
                let expected: f64 = rows[s].iter().map(|&(t, p)| p * values[t]).sum();
                let q = rewards[s] + model.discount * expected;
                if q > best_q {
                    best_q = q;
                    best_a = a;
                }
            }
            next[s] = best_q;
            policy[s] = best_a;
            delta = delta.max((best_q - values[s]).abs());
        }
        values = next;
        if delta <= threshold {
            converged = true;
            break;
        }
    }
    Ok(FlatSolution { values, policy, iterations, converged })
}

/// Evaluate a fixed policy (one action index per state) to within `epsilon`
/// by successive approximation.
pub fn flat_policy_value(
    model: &MdpModel,
    policy: &[usize],
    epsilon: f64,
    max_iterations: usize,
    state_bound: Option<usize>,
) -> Result<FlatSolution, OracleError> {
    let states = checked_state_count(model, state_bound.unwrap_or(DEFAULT_STATE_BOUND))?;
    assert_eq!(policy.len(), states, "policy must cover every state");
    let transitions = transition_table(model, states)?;
    let rewards = reward_table(model, states)?;
    let threshold = policy_eval_stop_threshold(epsilon, model.discount);

    let mut values = rewards.clone();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iterations {
        iterations += 1;
        let mut next = vec![0.0; states];
        let mut delta: f64 = 0.0;
        for s in 0..states {
            let expected: f64 = transitions[policy[s]][s].iter().map(|&(t, p)| p * values[t]).sum();
            next[s] = rewards[s] + model.discount * expected;
            delta = delta.max((next[s] - values[s]).abs());
        }
        values = next;
        if delta <= threshold {
            converged = true;
            break;
        }
    }
    Ok(FlatSolution { values, policy: policy.to_vec(), iterations, converged })
}

/// Outcome of checking a tree-based solution against a flat solve of the
/// same model.
#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub states: usize,
    pub iterations: usize,
    pub max_value_gap: f64,
    pub worst_state: Option<FlatState>,
    pub policy_agrees: bool,
    pub first_policy_mismatch: Option<FlatState>,
    pub pass: bool,
}

/// Compare a value and policy tree to a fresh flat solve. The value trees
/// must agree within `value_tol` in every state; the tree's action in every
/// state must come within `policy_tol` of the best one-step lookahead value
/// under the flat solution.
pub fn compare(
    model: &MdpModel,
    value_tree: &DecisionTree<f64>,
    policy_tree: &DecisionTree<usize>,
    epsilon: f64,
    value_tol: f64,
    policy_tol: f64,
    state_bound: Option<usize>,
) -> Result<ComparisonReport, OracleError> {
    let states = checked_state_count(model, state_bound.unwrap_or(DEFAULT_STATE_BOUND))?;
    let flat = flat_value_iteration(model, epsilon, usize::MAX, state_bound)?;

    let mut max_value_gap: f64 = 0.0;
    let mut worst_state = None;
    let mut policy_agrees = true;
    let mut first_policy_mismatch = None;
    for idx in 0..states {
        let pre = index_to_state(&model.variables, idx);
        let ctx = pre_context(&pre);
        let gap = (evaluate(value_tree, &ctx)? - flat.values[idx]).abs();
        if gap > max_value_gap {
            max_value_gap = gap;
            worst_state = Some(pre.clone());
        }
        let chosen = *evaluate(policy_tree, &ctx)?;
        if chosen >= model.actions.len() {
            return Err(ModelError::UnknownAction(format!("#{chosen}")).into());
        }
        let q_chosen = flat_q(model, &model.actions[chosen], &pre, &flat.values)?;
        let mut q_best = f64::NEG_INFINITY;
        for action in &model.actions {
            q_best = q_best.max(flat_q(model, action, &pre, &flat.values)?);
        }
        if policy_agrees && q_best - q_chosen > policy_tol {
            policy_agrees = false;
            first_policy_mismatch = Some(pre);
        }
    }
    let pass = max_value_gap <= value_tol && policy_agrees;
    Ok(ComparisonReport {
        states,
        iterations: flat.iterations,
        max_value_gap,
        worst_state,
        policy_agrees,
        first_policy_mismatch,
        pass,
    })
}

struct CiBucket {
    total: f64,
    a_marginal: Vec<f64>,
    b_marginal: Vec<f64>,
    joint: Vec<f64>,
}

/// Are `a` and `b` independent given `evidence` under the action's network,
/// with a uniform distribution over pre-action states? Decided by
/// enumerating the full joint and testing the factorization in every
/// evidence bucket, within [`CI_TOL`].
pub fn brute_force_ci(
    vars: &[Variable],
    action: &ActionNetwork,
    a: VariableRef,
    b: VariableRef,
    evidence: &BTreeSet<VariableRef>,
) -> Result<bool, OracleError> {
    let pre_count = vars
        .iter()
        .try_fold(1usize, |acc, v| acc.checked_mul(v.values.len()))
        .filter(|&c| c <= CI_ENUM_BOUND)
        .ok_or(OracleError::StateSpaceTooLarge(CI_ENUM_BOUND))?;
    vars.iter()
        .try_fold(pre_count, |acc, v| acc.checked_mul(v.values.len()))
        .filter(|&c| c <= CI_ENUM_BOUND)
        .ok_or(OracleError::StateSpaceTooLarge(CI_ENUM_BOUND))?;

    let da = vars[a.var].values.len();
    let db = vars[b.var].values.len();
    let prior = 1.0 / pre_count as f64;
    let mut buckets: BTreeMap<Vec<usize>, CiBucket> = BTreeMap::new();

    for pre_idx in 0..pre_count {
        let pre = index_to_state(vars, pre_idx);
        for (post, p) in flat_transition(action, &pre)? {
            let weight = prior * p;
            if weight <= 0.0 {
                continue;
            }
            let value_of = |r: VariableRef| if r.is_post() { post[r.var] } else { pre[r.var] };
            let key: Vec<usize> = evidence.iter().map(|&e| value_of(e)).collect();
            let av = value_of(a);
            let bv = value_of(b);
            let bucket = buckets.entry(key).or_insert_with(|| CiBucket {
                total: 0.0,
                a_marginal: vec![0.0; da],
                b_marginal: vec![0.0; db],
                joint: vec![0.0; da * db],
            });
            bucket.total += weight;
            bucket.a_marginal[av] += weight;
            bucket.b_marginal[bv] += weight;
            bucket.joint[av * db + bv] += weight;
        }
    }

    for bucket in buckets.values() {
        if bucket.total <= 0.0 {
            continue;
        }
        for av in 0..da {
            for bv in 0..db {
                let joint = bucket.joint[av * db + bv] / bucket.total;
                let product = (bucket.a_marginal[av] / bucket.total)
                    * (bucket.b_marginal[bv] / bucket.total);
                if (joint - product).abs() > CI_TOL {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}
