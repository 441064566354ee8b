//! Symbolic regression of a value tree through one action's network.
//!
//! [`regress`] answers: for every state, what distribution over the value
//! tree's branch contexts does taking the action induce? The answer is a
//! decision tree over pre-action variables whose leaves record that
//! distribution as a set of probability factors, and [`finalize`] turns it
//! into a Q-tree. States grouped under one leaf are exactly the states the
//! value function cannot tell apart after the action, so the whole Bellman
//! backup runs without ever enumerating states.
//!
//! Actions whose post-action variables influence one another need care:
//! integrating out a variable that another effect still depends on loses the
//! correlation between them. [`simplify`] therefore integrates pending
//! effect variables children first, keeps a variable inside a joint factor
//! for as long as some still-unrecorded effect can depend on it, and sums it
//! out the moment it stops mattering.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::model::{blocked, post_action_ordering, ActionNetwork, MdpModel, ModelError};
use crate::trees::{
    collapse_node, descend_fixed, evaluate, reduce, try_map_leaves_ctx, Context, DecisionTree,
    LeafDistance, TreeError, Variable, VariableRef,
};

#[derive(Debug, Error)]
pub enum RegressionError {
    #[error("action `{0}` has arcs between post-action variables; use the correlated regression")]
    CorrelatedAction(String),
    #[error("cannot integrate `{candidate}` while `{pending}`, which depends on it, is still pending")]
    OrderingViolation { candidate: String, pending: String },
    #[error("variable `{0}` is not recorded in the factor set")]
    ScopeError(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// A joint probability table over a set of post-action variables. Stored
/// dense, rows in lexicographic order of the (sorted) scope's value indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    scope: Vec<VariableRef>,
    arities: Vec<usize>,
    table: Vec<f64>,
}

impl Factor {
    pub fn new(scope: Vec<VariableRef>, arities: Vec<usize>, table: Vec<f64>) -> Self {
        assert!(scope.windows(2).all(|w| w[0] < w[1]), "scope must be sorted and duplicate-free");
        assert!(scope.iter().all(|v| v.is_post()), "factors range over post-action variables");
        assert_eq!(scope.len(), arities.len());
        assert_eq!(table.len(), arities.iter().product::<usize>());
        Factor { scope, arities, table }
    }

    pub fn singleton(var: VariableRef, distribution: Vec<f64>) -> Self {
        let arity = distribution.len();
        Factor::new(vec![var], vec![arity], distribution)
    }

    pub fn scope(&self) -> &[VariableRef] {
        &self.scope
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn contains(&self, var: VariableRef) -> bool {
        self.scope.binary_search(&var).is_ok()
    }

    fn decode(&self, mut row: usize) -> Vec<usize> {
        let mut values = vec![0; self.arities.len()];
        for i in (0..self.arities.len()).rev() {
            values[i] = row % self.arities[i];
            row /= self.arities[i];
        }
        values
    }

    fn matches(&self, values: &[usize], partial: &Context) -> bool {
        self.scope
            .iter()
            .zip(values)
            .all(|(v, &val)| partial.get(v).map_or(true, |&want| want == val))
    }

    /// Total probability of the rows consistent with `partial` (variables
    /// outside the scope are ignored; an empty restriction sums to one).
    pub fn marginal(&self, partial: &Context) -> f64 {
        self.table
            .iter()
            .enumerate()
            .filter(|(row, _)| self.matches(&self.decode(*row), partial))
            .map(|(_, p)| p)
            .sum()
    }

    /// Sum one variable out. `None` when that would empty the scope.
    fn marginalize_out(&self, var: VariableRef) -> Option<Factor> {
        let pos = self.scope.binary_search(&var).ok()?;
        if self.scope.len() == 1 {
            return None;
        }
        let mut scope = self.scope.clone();
        let mut arities = self.arities.clone();
        scope.remove(pos);
        arities.remove(pos);
        let mut table = vec![0.0; arities.iter().product()];
        for (row, p) in self.table.iter().enumerate() {
            let mut values = self.decode(row);
            values.remove(pos);
            table[index_of(&arities, &values)] += p;
        }
        Some(Factor { scope, arities, table })
    }

    fn lookup(&self, assignment: &Context) -> f64 {
        let values: Vec<usize> = self.scope.iter().map(|v| assignment[v]).collect();
        self.table[index_of(&self.arities, &values)]
    }
}

fn index_of(arities: &[usize], values: &[usize]) -> usize {
    arities.iter().zip(values).fold(0, |acc, (&a, &v)| acc * a + v)
}

/// Iterate all assignments of `scope` (given `arities`) in row order.
fn assignments(scope: &[VariableRef], arities: &[usize]) -> Vec<Context> {
    let total: usize = arities.iter().product();
    let mut out = Vec::with_capacity(total);
    for mut row in 0..total {
        let mut ctx = Context::new();
        for i in (0..scope.len()).rev() {
            ctx.insert(scope[i], row % arities[i]);
            row /= arities[i];
        }
        out.push(ctx);
    }
    out
}

/// Joint of `cell` and `extra`, chaining `extra`'s variables off the overlap:
/// rows are `cell(c) * extra(rest | overlap part of c)`. With no overlap this
/// is a plain product.
fn fuse(cell: &Factor, extra: &Factor, vars: &[Variable]) -> Factor {
    let scope: Vec<VariableRef> = cell
        .scope
        .iter()
        .chain(extra.scope.iter())
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let arities: Vec<usize> = scope.iter().map(|v| vars[v.var].values.len()).collect();
    let overlap: Vec<VariableRef> =
        extra.scope.iter().filter(|v| cell.contains(**v)).copied().collect();
    let mut table = Vec::with_capacity(arities.iter().product());
    for ctx in assignments(&scope, &arities) {
        let base = cell.lookup(&ctx);
        let joint = extra.lookup(&ctx);
        let anchor: Context = overlap.iter().map(|v| (*v, ctx[v])).collect();
        let denom = extra.marginal(&anchor);
        table.push(if denom == 0.0 { 0.0 } else { base * joint / denom });
    }
    Factor { scope, arities, table }
}

/// The probability record at one leaf of a partial Q-tree: a set of factors
/// with pairwise disjoint scopes. Variables in separate factors are
/// independent given the leaf's context; correlated ones share a factor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FactorSet {
    factors: Vec<Factor>,
}

impl FactorSet {
    pub fn empty() -> Self {
        FactorSet::default()
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn push(&mut self, factor: Factor) {
        debug_assert!(
            factor.scope.iter().all(|v| !self.records(*v)),
            "factor scopes must stay disjoint"
        );
        self.factors.push(factor);
    }

    pub fn records(&self, var: VariableRef) -> bool {
        self.factor_index(var).is_some()
    }

    fn factor_index(&self, var: VariableRef) -> Option<usize> {
        self.factors.iter().position(|f| f.contains(var))
    }

    pub fn factor_of(&self, var: VariableRef) -> Option<&Factor> {
        self.factor_index(var).map(|i| &self.factors[i])
    }

    pub fn recorded_vars(&self) -> BTreeSet<VariableRef> {
        self.factors.iter().flat_map(|f| f.scope.iter().copied()).collect()
    }
}

/// Remove `target` from the factor set. With `keep_joint` the enclosing
/// factor is left as the joint it already stores; without it the variable is
/// summed out, and a factor whose scope empties disappears.
pub fn eliminate(
    set: &FactorSet,
    target: VariableRef,
    keep_joint: bool,
) -> Result<FactorSet, RegressionError> {
    let idx = set
        .factor_index(target)
        .ok_or_else(|| RegressionError::ScopeError(format!("{target:?}")))?;
    let mut out = set.clone();
    if !keep_joint {
        match out.factors[idx].marginalize_out(target) {
            Some(f) => out.factors[idx] = f,
            None => {
                out.factors.remove(idx);
            }
        }
    }
    Ok(out)
}

/// Probability of reaching the branch context `branch` (post-action
/// assignments), under the distribution a factor set records. A variable no
/// factor records was never reachable with positive probability, so any
/// branch assigning it has probability zero.
pub fn branch_probability(label: &FactorSet, branch: &Context) -> f64 {
    if branch.keys().any(|v| !label.records(*v)) {
        return 0.0;
    }
    label
        .factors
        .iter()
        .map(|f| {
            let restricted: Context =
                branch.iter().filter(|(v, _)| f.contains(**v)).map(|(v, &x)| (*v, x)).collect();
            if restricted.is_empty() {
                1.0
            } else {
                f.marginal(&restricted)
            }
        })
        .product()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CtxStatus {
    Zero,
    Open,
}

/// Can `assignment` (over post-action variables) still carry probability
/// mass under `label`? Exact zeros in recorded factors rule a context out.
/// An unrecorded variable rules it out only if its regression pass already
/// ran (`processed`): recording was skipped precisely because no context
/// reaching it was live.
fn context_status(
    label: &FactorSet,
    assignment: &Context,
    processed: Option<&BTreeSet<usize>>,
) -> CtxStatus {
    for factor in &label.factors {
        let restricted: Context = assignment
            .iter()
            .filter(|(v, _)| factor.contains(**v))
            .map(|(v, &x)| (*v, x))
            .collect();
        if !restricted.is_empty() && factor.marginal(&restricted) == 0.0 {
            return CtxStatus::Zero;
        }
    }
    if let Some(done) = processed {
        for var in assignment.keys() {
            if !label.records(*var) && done.contains(&var.var) {
                return CtxStatus::Zero;
            }
        }
    }
    CtxStatus::Open
}

/// Post-action variables lying on some value-tree branch that is still live
/// under `label`.
fn live_branch_vars(label: &FactorSet, value_tree: &DecisionTree<f64>) -> BTreeSet<usize> {
    let mut live = BTreeSet::new();
    for (ctx, _) in value_tree.branches() {
        let post: Context = ctx.iter().map(|(v, &x)| (v.primed(), x)).collect();
        if context_status(label, &post, None) == CtxStatus::Open {
            live.extend(post.keys().map(|v| v.var));
        }
    }
    live
}

/// Does the correlation carried by `candidate` still matter? It does if the
/// value tree tests it on a live branch, or if some live, not yet recorded
/// variable `z` can depend on it: the path from `candidate` to `z` in the
/// action's network is not blocked by the regressed variable together with
/// everything the contexts `outer` and `inner` fix. Until then the variable
/// must stay recorded (jointly with whatever it is correlated to); afterwards
/// it can be summed out.
pub fn needed(
    candidate: VariableRef,
    label: &FactorSet,
    outer: &Context,
    inner: &Context,
    regressed: VariableRef,
    value_tree: &DecisionTree<f64>,
    action: &ActionNetwork,
) -> bool {
    let live = live_branch_vars(label, value_tree);
    if live.contains(&candidate.var) {
        return true;
    }
    let mut evidence: BTreeSet<VariableRef> =
        outer.keys().chain(inner.keys()).copied().collect();
    evidence.insert(regressed);
    debug_assert!(!evidence.contains(&candidate));
    live.iter().any(|&z| {
        z != candidate.var
            && z != regressed.var
            && !label.records(VariableRef::post(z))
            && !blocked(action, candidate, VariableRef::post(z), &evidence)
    })
}

/// Order in which pending post-action tests are integrated. The standard
/// order puts every variable before its ancestors in the action's network,
/// which is what makes conditional lookups from the variable's own tree
/// valid at integration time. `guard` rejects integrations that would run
/// ahead of a still-pending descendant instead of silently miscomputing.
pub struct EliminationOrder {
    position: Vec<usize>,
    guard: bool,
}

impl EliminationOrder {
    pub fn standard(action: &ActionNetwork) -> Result<Self, ModelError> {
        let order = post_action_ordering(action)?;
        Ok(EliminationOrder::custom(order.len(), &order, true))
    }

    /// Test hook: an explicit integration sequence. Variables not listed
    /// come after all listed ones, in index order.
    pub fn custom(n_vars: usize, order: &[usize], guard: bool) -> Self {
        let mut position = vec![usize::MAX; n_vars];
        for (rank, &var) in order.iter().enumerate() {
            position[var] = rank;
        }
        for (var, pos) in position.iter_mut().enumerate() {
            if *pos == usize::MAX {
                *pos = order.len() + var;
            }
        }
        EliminationOrder { position, guard }
    }
}

/// One leaf of the fragment being simplified. `cell` is the joint over the
/// effect variables integrated so far, conditioned on the path's pre-action
/// context and its still-pending post-action assignments. `engaged` indexes
/// label factors whose variables have entered the cell; they are folded back
/// in when the leaf is sealed. `Dead` marks a zero-probability pending
/// context; the weight of the branch leading to it is exactly zero, so it is
/// dropped when that branch's pending variable is integrated.
#[derive(Debug, Clone, PartialEq)]
enum LeafState {
    Dead,
    Live { cell: Factor, engaged: BTreeSet<usize> },
}

enum Posterior {
    Distribution(Vec<f64>),
    NeedPre(VariableRef),
    ZeroMass,
}

/// Exact conditional for `query` given the evidence a mix point has pinned:
/// the pre-action region in `ctx` plus post-action assignments from both
/// `ctx` and `extra`. Computed by enumerating the ancestors of the involved
/// variables in the action's network, so it stays valid when the evidence
/// includes descendants of `query`. Needing an unpinned pre-action variable
/// is reported so the caller can split on it.
fn post_posterior(
    model: &MdpModel,
    action: &ActionNetwork,
    query: VariableRef,
    ctx: &Context,
    extra: &Context,
) -> Posterior {
    let mut closure: BTreeSet<usize> = BTreeSet::new();
    let mut frontier: Vec<usize> = vec![query.var];
    frontier.extend(ctx.keys().filter(|v| v.is_post()).map(|v| v.var));
    frontier.extend(extra.keys().map(|v| v.var));
    while let Some(var) = frontier.pop() {
        if closure.insert(var) {
            frontier.extend(action.intra_parents(var));
        }
    }
    let free: Vec<usize> = closure
        .iter()
        .copied()
        .filter(|&v| {
            let r = VariableRef::post(v);
            !ctx.contains_key(&r) && !extra.contains_key(&r)
        })
        .collect();
    let arity = model.variables[query.var].values.len();
    let mut numerators = vec![0.0; arity];
    let mut denominator = 0.0;
    let mut assignment: Context = ctx.clone();
    for (v, &x) in extra {
        assignment.insert(*v, x);
    }
    let free_arities: Vec<usize> = free.iter().map(|&v| model.variables[v].values.len()).collect();
    let combos: usize = free_arities.iter().product();
    for mut combo in 0..combos {
        for i in (0..free.len()).rev() {
            assignment.insert(VariableRef::post(free[i]), combo % free_arities[i]);
            combo /= free_arities[i];
        }
        let mut weight = 1.0;
        for &var in &closure {
            let dist = match evaluate(&action.cpt(var).tree, &assignment) {
                Ok(dist) => dist,
                Err(TreeError::MissingAssignment(missing)) => {
                    debug_assert!(!missing.is_post(), "closure covers all post-action parents");
                    return Posterior::NeedPre(missing);
                }
                Err(_) => unreachable!(),
            };
            weight *= dist[assignment[&VariableRef::post(var)]];
            if weight == 0.0 {
                break;
            }
        }
        denominator += weight;
        numerators[assignment[&query]] += weight;
    }
    if denominator == 0.0 {
        return Posterior::ZeroMass;
    }
    Posterior::Distribution(numerators.iter().map(|n| n / denominator).collect())
}

/// Interrupts raised while mixing one leaf group; handled by splitting the
/// fragment or pronouncing the context dead.
enum MixFlow {
    Split(VariableRef),
    Dead,
}

struct SimplifyEnv<'a> {
    model: &'a MdpModel,
    action: &'a ActionNetwork,
    target: usize,
    label: &'a FactorSet,
    value_tree: &'a DecisionTree<f64>,
}

/// Integrate the tree of `target`'s conditional distributions into the leaf
/// label `l` under the pre-action context `k`, resolving every test of a
/// post-action variable on the way. The result fragment tests pre-action
/// variables only; each leaf carries the updated factor set.
pub fn simplify(
    model: &MdpModel,
    action: &ActionNetwork,
    target: usize,
    label: &FactorSet,
    k: &Context,
    value_tree: &DecisionTree<f64>,
    order: &EliminationOrder,
) -> Result<DecisionTree<FactorSet>, RegressionError> {
    let vars = &model.variables;
    let env = SimplifyEnv { model, action, target, label, value_tree };
    let mut fragment = reduce(&action.cpt(target).tree, k, vars).map_leaves(&mut |dist: &Vec<
        f64,
    >| {
        LeafState::Live {
            cell: Factor::singleton(VariableRef::post(target), dist.clone()),
            engaged: BTreeSet::new(),
        }
    });
    let mut passes = 0;
    loop {
        let pending: BTreeSet<VariableRef> =
            fragment.tested_vars().into_iter().filter(|v| v.is_post()).collect();
        let Some(&next) = pending.iter().min_by_key(|v| order.position[v.var]) else {
            break;
        };
        if order.guard {
            let descendants = action.intra_descendants(next.var);
            if let Some(dep) = pending.iter().find(|p| **p != next && descendants.contains(&p.var))
            {
                return Err(RegressionError::OrderingViolation {
                    candidate: vars[next.var].name.clone(),
                    pending: vars[dep.var].name.clone(),
                });
            }
        }
        let mut ctx = k.clone();
        fragment = integrate_var(&fragment, next, &mut ctx, &env)?;
        passes += 1;
        // The standard order finishes in one pass per variable. Integrating
        // out of order can re-surface ancestors a bounded number of times;
        // this only trips on a genuine failure to make progress.
        assert!(passes <= 10_000, "pending integration failed to make progress");
    }
    let value_tree_vars: BTreeSet<usize> =
        value_tree.tested_vars().into_iter().map(|v| v.var).collect();
    let mut ctx = k.clone();
    try_map_leaves_ctx(&fragment, &mut ctx, vars, &mut |leaf_ctx, state| {
        seal_leaf(state, leaf_ctx, &env, &value_tree_vars)
    })
}

/// Replace every test of `pending` in the fragment by the mix of its
/// subtrees.
fn integrate_var(
    fragment: &DecisionTree<LeafState>,
    pending: VariableRef,
    ctx: &mut Context,
    env: &SimplifyEnv,
) -> Result<DecisionTree<LeafState>, RegressionError> {
    match fragment {
        DecisionTree::Leaf(_) => Ok(fragment.clone()),
        DecisionTree::Node { test, children } if *test == pending => {
            let subtrees: Vec<&DecisionTree<LeafState>> = children.iter().collect();
            mix_subtrees(pending, &subtrees, ctx, env)
        }
        DecisionTree::Node { test, children } => {
            let mut new_children = Vec::with_capacity(children.len());
            for (value, child) in children.iter().enumerate() {
                ctx.insert(*test, value);
                let result = integrate_var(child, pending, ctx, env);
                ctx.remove(test);
                new_children.push(result?);
            }
            Ok(collapse_node(*test, new_children))
        }
    }
}

/// Mix the per-value subtrees of a pending test. The mixing weights are
/// resolved first: tests of `pending`'s conditional tree the context does
/// not fix become fresh splits above the mix. Pre-action ones turn into
/// Q-tree structure; post-action ones are new pending tests for a later
/// pass. Once the weights are concrete, zero-weight subtrees are dropped
/// whole, tests and all, and only the survivors are walked.
fn mix_subtrees(
    pending: VariableRef,
    subtrees: &[&DecisionTree<LeafState>],
    ctx: &mut Context,
    env: &SimplifyEnv,
) -> Result<DecisionTree<LeafState>, RegressionError> {
    let weights = match descend_fixed(&env.action.cpt(pending.var).tree, ctx) {
        DecisionTree::Leaf(dist) => dist.clone(),
        DecisionTree::Node { test, .. } => {
            let test = *test;
            let arity = env.model.variables[test.var].values.len();
            let mut children = Vec::with_capacity(arity);
            for value in 0..arity {
                ctx.insert(test, value);
                let result = mix_subtrees(pending, subtrees, ctx, env);
                ctx.remove(&test);
                children.push(result?);
            }
            return Ok(collapse_node(test, children));
        }
    };
    let survivors: Vec<(usize, &DecisionTree<LeafState>)> = weights
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(value, _)| (value, subtrees[value]))
        .collect();
    walk_survivors(pending, &survivors, &weights, ctx, env)
}

/// Walk the surviving subtrees in lockstep until every one is a leaf,
/// reproducing any structure below them, then mix the leaf group.
fn walk_survivors(
    pending: VariableRef,
    survivors: &[(usize, &DecisionTree<LeafState>)],
    weights: &[f64],
    ctx: &mut Context,
    env: &SimplifyEnv,
) -> Result<DecisionTree<LeafState>, RegressionError> {
    let current: Vec<(usize, &DecisionTree<LeafState>)> =
        survivors.iter().map(|&(value, t)| (value, descend_fixed(t, ctx))).collect();
    let split = current.iter().find_map(|(_, t)| match t {
        DecisionTree::Node { test, .. } => Some(*test),
        DecisionTree::Leaf(_) => None,
    });
    let Some(split) = split else {
        let states: Vec<(usize, &LeafState)> = current
            .iter()
            .map(|(value, t)| match t {
                DecisionTree::Leaf(state) => (*value, state),
                DecisionTree::Node { .. } => unreachable!(),
            })
            .collect();
        return mix_leaves(pending, &states, weights, ctx, env);
    };
    debug_assert_ne!(split, pending, "a pending variable cannot be re-tested beneath itself");
    let arity = env.model.variables[split.var].values.len();
    let mut children = Vec::with_capacity(arity);
    for value in 0..arity {
        ctx.insert(split, value);
        let result = walk_survivors(pending, &current, weights, ctx, env);
        ctx.remove(&split);
        children.push(result?);
    }
    Ok(collapse_node(split, children))
}

/// Mix one group of aligned leaves, resolving scope differences between the
/// surviving cells and emitting the joint. Splits requested by the scope
/// completion (always on pre-action variables) are retried with the context
/// extended.
fn mix_leaves(
    pending: VariableRef,
    states: &[(usize, &LeafState)],
    weights: &[f64],
    ctx: &mut Context,
    env: &SimplifyEnv,
) -> Result<DecisionTree<LeafState>, RegressionError> {
    match mix_cells(pending, states, weights, ctx, env) {
        Ok(state) => Ok(DecisionTree::Leaf(state)),
        Err(MixFlow::Dead) => Ok(DecisionTree::Leaf(LeafState::Dead)),
        Err(MixFlow::Split(var)) => {
            debug_assert!(!var.is_post());
            let arity = env.model.variables[var.var].values.len();
            let mut children = Vec::with_capacity(arity);
            for value in 0..arity {
                ctx.insert(var, value);
                let result = mix_leaves(pending, states, weights, ctx, env);
                ctx.remove(&var);
                children.push(result?);
            }
            Ok(collapse_node(var, children))
        }
    }
}

fn mix_cells(
    pending: VariableRef,
    states: &[(usize, &LeafState)],
    weights: &[f64],
    ctx: &Context,
    env: &SimplifyEnv,
) -> Result<LeafState, MixFlow> {
    let vars = &env.model.variables;
    // A positive-weight branch into a dead context makes the whole pinned
    // context dead; dead contexts under zero-weight values were already
    // dropped with their subtree.
    let mut survivors: Vec<(usize, Factor, BTreeSet<usize>)> = Vec::new();
    for &(value, state) in states {
        match state {
            LeafState::Dead => return Err(MixFlow::Dead),
            LeafState::Live { cell, engaged } => {
                survivors.push((value, cell.clone(), engaged.clone()));
            }
        }
    }
    debug_assert!(!survivors.is_empty(), "a conditional distribution has positive mass");

    // Shared scope: complete a missing variable while its correlation still
    // matters, otherwise sum it out of the cells that have it.
    let empty = Context::new();
    let union: BTreeSet<VariableRef> =
        survivors.iter().flat_map(|(_, cell, _)| cell.scope.iter().copied()).collect();
    let mut kept: Vec<VariableRef> = Vec::new();
    for var in union {
        let everywhere = survivors.iter().all(|(_, cell, _)| cell.contains(var));
        let retain = everywhere
            || env.label.records(var)
            || needed(var, env.label, ctx, &empty, VariableRef::post(env.target), env.value_tree, env.action);
        if retain {
            kept.push(var);
            for (value, cell, _) in survivors.iter_mut() {
                if !cell.contains(var) {
                    *cell = complete_cell(cell, var, pending, *value, ctx, env)?;
                }
            }
        } else {
            for (_, cell, _) in survivors.iter_mut() {
                if cell.contains(var) {
                    *cell = cell
                        .marginalize_out(var)
                        .expect("the regressed variable keeps cells non-empty");
                }
            }
        }
    }

    let retain_pending = env.label.records(pending)
        || needed(pending, env.label, ctx, &empty, VariableRef::post(env.target), env.value_tree, env.action);
    let mut scope = kept.clone();
    if retain_pending {
        scope.push(pending);
        scope.sort();
    }
    let arities: Vec<usize> = scope.iter().map(|v| vars[v.var].values.len()).collect();
    let mut table = Vec::with_capacity(arities.iter().product());
    for row in assignments(&scope, &arities) {
        if retain_pending {
            let value = row[&pending];
            let entry = survivors
                .iter()
                .find(|(v, _, _)| *v == value)
                .map_or(0.0, |(_, cell, _)| weights[value] * cell.lookup(&row));
            table.push(entry);
        } else {
            table.push(
                survivors
                    .iter()
                    .map(|(value, cell, _)| weights[*value] * cell.lookup(&row))
                    .sum(),
            );
        }
    }

    let mut engaged: BTreeSet<usize> =
        survivors.into_iter().flat_map(|(_, _, engaged)| engaged).collect();
    for var in &scope {
        if let Some(idx) = env.label.factor_index(*var) {
            engaged.insert(idx);
        }
    }
    let cell = Factor::new(scope, arities, table);
    debug_assert!(
        cell.scope.iter().all(|v| !ctx.contains_key(v)),
        "cells never range over pinned variables"
    );
    Ok(LeafState::Live { cell, engaged })
}

/// Extend `cell` (the joint for one value of the variable being mixed) with
/// `missing`, using the exact conditional of `missing` given everything the
/// row and the context fix.
fn complete_cell(
    cell: &Factor,
    missing: VariableRef,
    pending: VariableRef,
    pending_value: usize,
    ctx: &Context,
    env: &SimplifyEnv,
) -> Result<Factor, MixFlow> {
    let arity = env.model.variables[missing.var].values.len();
    let pos = cell.scope.binary_search(&missing).unwrap_err();
    let mut scope = cell.scope.clone();
    let mut arities = cell.arities.clone();
    scope.insert(pos, missing);
    arities.insert(pos, arity);
    let mut table = vec![0.0; arities.iter().product::<usize>()];
    for (row, &base) in cell.table.iter().enumerate() {
        let values = cell.decode(row);
        let mut extra: Context = cell.scope.iter().copied().zip(values.iter().copied()).collect();
        extra.insert(pending, pending_value);
        let dist = if base == 0.0 {
            vec![0.0; arity]
        } else {
            match post_posterior(env.model, env.action, missing, ctx, &extra) {
                Posterior::Distribution(dist) => dist,
                Posterior::NeedPre(var) => return Err(MixFlow::Split(var)),
                Posterior::ZeroMass => return Err(MixFlow::Dead),
            }
        };
        for (value, &p) in dist.iter().enumerate() {
            let mut full = values.clone();
            full.insert(pos, value);
            table[index_of(&arities, &full)] = base * p;
        }
    }
    Ok(Factor { scope, arities, table })
}

/// Seal one fragment leaf once nothing is pending: fold engaged label
/// factors into the cell, keep the rest, then sum out whatever auxiliary
/// variable is no longer needed.
fn seal_leaf(
    state: &LeafState,
    ctx: &Context,
    env: &SimplifyEnv,
    value_tree_vars: &BTreeSet<usize>,
) -> Result<DecisionTree<FactorSet>, RegressionError> {
    let LeafState::Live { cell, engaged } = state else {
        unreachable!("a dead leaf always sits below a pending test and is dropped with it");
    };
    debug_assert!(ctx.keys().all(|v| !v.is_post()));
    let mut fused = cell.clone();
    for &idx in engaged {
        fused = fuse(&fused, &env.label.factors[idx], &env.model.variables);
    }
    let mut out = FactorSet::empty();
    for (idx, factor) in env.label.factors.iter().enumerate() {
        if !engaged.contains(&idx) {
            out.push(factor.clone());
        }
    }
    out.push(fused);
    let empty = Context::new();
    let regressed = VariableRef::post(env.target);
    for var in out.recorded_vars() {
        if var.var == env.target || value_tree_vars.contains(&var.var) {
            continue;
        }
        if !needed(var, &out, ctx, &empty, regressed, env.value_tree, env.action) {
            out = eliminate(&out, var, false).expect("recorded variables can be eliminated");
        }
    }
    Ok(DecisionTree::Leaf(out))
}

/// Pre-action variables of the value tree in depth-first, left-to-right
/// first-occurrence order: the order regression processes them in.
fn value_order(value_tree: &DecisionTree<f64>) -> Vec<usize> {
    let mut order = Vec::new();
    let mut seen = BTreeSet::new();
    collect_value_order(value_tree, &mut order, &mut seen);
    order
}

fn collect_value_order(
    tree: &DecisionTree<f64>,
    order: &mut Vec<usize>,
    seen: &mut BTreeSet<usize>,
) {
    if let DecisionTree::Node { test, children } = tree {
        if seen.insert(test.var) {
            order.push(test.var);
        }
        for child in children {
            collect_value_order(child, order, seen);
        }
    }
}

/// Contexts (as post-action assignments) leading to each test of `var` in
/// the value tree.
fn occurrence_prefixes(value_tree: &DecisionTree<f64>, var: usize) -> Vec<Context> {
    let mut out = Vec::new();
    let mut ctx = Context::new();
    collect_prefixes(value_tree, var, &mut ctx, &mut out);
    out
}

fn collect_prefixes(
    tree: &DecisionTree<f64>,
    var: usize,
    ctx: &mut Context,
    out: &mut Vec<Context>,
) {
    if let DecisionTree::Node { test, children } = tree {
        if test.var == var {
            out.push(ctx.clone());
            return;
        }
        for (value, child) in children.iter().enumerate() {
            ctx.insert(test.primed(), value);
            collect_prefixes(child, var, ctx, out);
            ctx.remove(&test.primed());
        }
    }
}

fn regress_with(
    model: &MdpModel,
    action: &ActionNetwork,
    value_tree: &DecisionTree<f64>,
    order: &EliminationOrder,
) -> Result<DecisionTree<FactorSet>, RegressionError> {
    let vars = &model.variables;
    let mut pq: DecisionTree<FactorSet> = DecisionTree::Leaf(FactorSet::empty());
    let mut processed: BTreeSet<usize> = BTreeSet::new();
    for x in value_order(value_tree) {
        let prefixes = occurrence_prefixes(value_tree, x);
        let mut ctx = Context::new();
        pq = try_map_leaves_ctx(&pq, &mut ctx, vars, &mut |k, label: &FactorSet| {
            if label.records(VariableRef::post(x)) {
                return Ok(DecisionTree::Leaf(label.clone()));
            }
            let reachable = prefixes
                .iter()
                .any(|p| context_status(label, p, Some(&processed)) == CtxStatus::Open);
            if !reachable {
                return Ok(DecisionTree::Leaf(label.clone()));
            }
            simplify(model, action, x, label, k, value_tree, order)
        })?;
        processed.insert(x);
    }
    Ok(pq)
}

/// Regress `value_tree` through `action`, recording at every leaf the joint
/// distribution the action induces over the value tree's branch contexts.
/// Correlations between action effects are kept in joint factors for exactly
/// as long as they can still influence an unrecorded effect.
pub fn regress(
    model: &MdpModel,
    action: &ActionNetwork,
    value_tree: &DecisionTree<f64>,
) -> Result<DecisionTree<FactorSet>, RegressionError> {
    regress_with(model, action, value_tree, &EliminationOrder::standard(action)?)
}

/// [`regress`] with an explicit integration order for pending effect
/// variables, exposed so tests can demonstrate why the standard order
/// matters. `guard` keeps the order-violation check on.
pub fn regress_with_elimination_order(
    model: &MdpModel,
    action: &ActionNetwork,
    value_tree: &DecisionTree<f64>,
    order: &[usize],
    guard: bool,
) -> Result<DecisionTree<FactorSet>, RegressionError> {
    regress_with(
        model,
        action,
        value_tree,
        &EliminationOrder::custom(model.n_vars(), order, guard),
    )
}

/// Regression specialized to actions without arcs between post-action
/// variables: each effect tree is grafted directly and its distribution
/// recorded as an independent factor.
pub fn regress_uncorrelated(
    model: &MdpModel,
    action: &ActionNetwork,
    value_tree: &DecisionTree<f64>,
) -> Result<DecisionTree<FactorSet>, RegressionError> {
    if action.has_intra_arcs() {
        return Err(RegressionError::CorrelatedAction(action.name.clone()));
    }
    let vars = &model.variables;
    let mut pq: DecisionTree<FactorSet> = DecisionTree::Leaf(FactorSet::empty());
    let mut processed: BTreeSet<usize> = BTreeSet::new();
    for x in value_order(value_tree) {
        let prefixes = occurrence_prefixes(value_tree, x);
        let mut ctx = Context::new();
        pq = try_map_leaves_ctx(&pq, &mut ctx, vars, &mut |k, label: &FactorSet| -> Result<_, RegressionError> {
            if label.records(VariableRef::post(x)) {
                return Ok(DecisionTree::Leaf(label.clone()));
            }
            let reachable = prefixes
                .iter()
                .any(|p| context_status(label, p, Some(&processed)) == CtxStatus::Open);
            if !reachable {
                return Ok(DecisionTree::Leaf(label.clone()));
            }
            let fragment = reduce(&action.cpt(x).tree, k, vars);
            debug_assert!(fragment.tested_vars().iter().all(|v| !v.is_post()));
            Ok(fragment.map_leaves(&mut |dist: &Vec<f64>| {
                let mut extended = label.clone();
                extended.push(Factor::singleton(VariableRef::post(x), dist.clone()));
                extended
            }))
        })?;
        processed.insert(x);
    }
    Ok(pq)
}

/// Turn a regressed tree into a Q-tree: at every leaf the expected future
/// value is the label's distribution over value-tree branches times their
/// values, discounted, and the reward tree is merged in on top.
pub fn finalize(
    model: &MdpModel,
    pq: &DecisionTree<FactorSet>,
    value_tree: &DecisionTree<f64>,
    reward: &DecisionTree<f64>,
    discount: f64,
) -> DecisionTree<f64> {
    let branches: Vec<(Context, f64)> = value_tree
        .branches()
        .into_iter()
        .map(|(ctx, &v)| (ctx.iter().map(|(r, &x)| (r.primed(), x)).collect(), v))
        .collect();
    let future = pq.map_leaves(&mut |label: &FactorSet| {
        discount
            * branches
                .iter()
                .map(|(branch, value)| branch_probability(label, branch) * value)
                .sum::<f64>()
    });
    crate::trees::merge2(reward, &future, &model.variables, &mut |r, f| r + f)
}

/// Factor sets compare by the full joint they denote; differing recorded
/// scopes are maximally distant.
impl LeafDistance for FactorSet {
    fn leaf_distance(&self, other: &Self) -> f64 {
        let mine = self.recorded_vars();
        if mine != other.recorded_vars() {
            return f64::INFINITY;
        }
        let scope: Vec<VariableRef> = mine.into_iter().collect();
        // Domain sizes are not to hand here; factors carry their own.
        let arity_of = |set: &FactorSet, v: VariableRef| -> usize {
            let f = set.factor_of(v).expect("recorded");
            f.arities[f.scope.binary_search(&v).expect("recorded")]
        };
        let arities: Vec<usize> = scope.iter().map(|&v| arity_of(self, v)).collect();
        assignments(&scope, &arities)
            .into_iter()
            .map(|ctx| {
                let a: f64 = self.factors.iter().map(|f| f.lookup(&ctx)).product();
                let b: f64 = other.factors.iter().map(|f| f.lookup(&ctx)).product();
                (a - b).abs()
            })
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Cpt;
    use crate::oracle::{flat_q, index_to_state, pre_context};
    use crate::trees::semantic_eq;

    fn binary_vars(names: &[&str]) -> Vec<Variable> {
        names.iter().map(|n| Variable::binary(n)).collect()
    }

    fn leaf(p: f64) -> DecisionTree<Vec<f64>> {
        DecisionTree::Leaf(vec![p, 1.0 - p])
    }

    fn node<L>(test: VariableRef, t: DecisionTree<L>, f: DecisionTree<L>) -> DecisionTree<L> {
        DecisionTree::Node { test, children: vec![t, f] }
    }

    /// Two variables, one action. Y's effect depends on X's post-action
    /// value, so the effects are correlated.
    fn correlated_pair() -> MdpModel {
        let x = VariableRef::pre(0);
        let x_post = VariableRef::post(0);
        let cpt_x = Cpt::new(vec![x], node(x, leaf(0.8), leaf(0.3)));
        let cpt_y = Cpt::new(vec![x_post], node(x_post, leaf(0.9), leaf(0.2)));
        let action = ActionNetwork { name: "act".into(), cpts: vec![cpt_x, cpt_y] };
        MdpModel {
            variables: binary_vars(&["X", "Y"]),
            actions: vec![action],
            reward: node(VariableRef::pre(1), DecisionTree::Leaf(1.0), DecisionTree::Leaf(0.0)),
            discount: 0.9,
        }
    }

    #[test]
    fn eliminate_sums_a_variable_out_of_its_joint() {
        // joint over (Y', W'): rows y,w ; y,!w ; !y,w ; !y,!w
        let joint = Factor::new(
            vec![VariableRef::post(0), VariableRef::post(1)],
            vec![2, 2],
            vec![0.9 * 0.7, 0.9 * 0.3, 0.1 * 0.4, 0.1 * 0.6],
        );
        let mut set = FactorSet::empty();
        set.push(joint);
        let dropped = eliminate(&set, VariableRef::post(0), false).unwrap();
        assert_eq!(dropped.factors().len(), 1);
        let w = dropped.factors()[0].clone();
        assert_eq!(w.scope(), &[VariableRef::post(1)]);
        let expect = [0.9 * 0.7 + 0.1 * 0.4, 0.9 * 0.3 + 0.1 * 0.6];
        for (got, want) in w.table().iter().zip(expect) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn eliminate_with_keep_joint_changes_nothing() {
        let joint = Factor::new(
            vec![VariableRef::post(0), VariableRef::post(1)],
            vec![2, 2],
            vec![0.5, 0.2, 0.1, 0.2],
        );
        let mut set = FactorSet::empty();
        set.push(joint.clone());
        let kept = eliminate(&set, VariableRef::post(1), true).unwrap();
        assert_eq!(kept.factors()[0], joint);
    }

    #[test]
    fn eliminating_the_last_variable_removes_the_factor() {
        let mut set = FactorSet::empty();
        set.push(Factor::singleton(VariableRef::post(0), vec![0.4, 0.6]));
        set.push(Factor::singleton(VariableRef::post(1), vec![1.0, 0.0]));
        let out = eliminate(&set, VariableRef::post(0), false).unwrap();
        assert_eq!(out.factors().len(), 1);
        assert!(out.records(VariableRef::post(1)));
        assert!(!out.records(VariableRef::post(0)));
    }

    #[test]
    fn eliminate_rejects_unrecorded_variables() {
        let set = FactorSet::empty();
        assert!(matches!(
            eliminate(&set, VariableRef::post(0), false),
            Err(RegressionError::ScopeError(_))
        ));
    }

    #[test]
    fn branch_probability_multiplies_independent_factors_and_reads_joints() {
        let mut set = FactorSet::empty();
        set.push(Factor::new(
            vec![VariableRef::post(0), VariableRef::post(1)],
            vec![2, 2],
            vec![0.54, 0.06, 0.08, 0.32],
        ));
        set.push(Factor::singleton(VariableRef::post(2), vec![0.25, 0.75]));
        let mut branch = Context::new();
        branch.insert(VariableRef::post(0), 0);
        branch.insert(VariableRef::post(1), 1);
        branch.insert(VariableRef::post(2), 1);
        // joint lookup, not a product of marginals: Pr(y, !w) = 0.06
        assert!((branch_probability(&set, &branch) - 0.06 * 0.75).abs() < 1e-12);
        branch.insert(VariableRef::post(3), 0);
        assert_eq!(branch_probability(&set, &branch), 0.0);
        assert_eq!(branch_probability(&set, &Context::new()), 1.0);
    }

    #[test]
    fn regression_matches_state_enumeration_on_a_correlated_action() {
        let model = correlated_pair();
        let value_tree = node(
            VariableRef::pre(1),
            node(VariableRef::pre(0), DecisionTree::Leaf(3.0), DecisionTree::Leaf(2.0)),
            DecisionTree::Leaf(0.0),
        );
        let action = &model.actions[0];
        let pq = regress(&model, action, &value_tree).unwrap();
        let q = finalize(&model, &pq, &value_tree, &model.reward, model.discount);
        let values: Vec<f64> = (0..4)
            .map(|i| {
                let state = index_to_state(&model.variables, i);
                *evaluate(&value_tree, &pre_context(&state)).unwrap()
            })
            .collect();
        for state in [[0, 0], [0, 1], [1, 0], [1, 1]] {
            let flat = flat_q(&model, action, &state.to_vec(), &values).unwrap();
            let ctx = pre_context(&state.to_vec());
            let got = *evaluate(&q, &ctx).unwrap();
            assert!((got - flat).abs() < 1e-12, "state {state:?}: {got} vs {flat}");
        }
    }

    #[test]
    fn correlated_effects_are_recorded_as_a_joint_factor() {
        let model = correlated_pair();
        let value_tree = node(
            VariableRef::pre(1),
            node(VariableRef::pre(0), DecisionTree::Leaf(3.0), DecisionTree::Leaf(2.0)),
            DecisionTree::Leaf(0.0),
        );
        let pq = regress(&model, &model.actions[0], &value_tree).unwrap();
        for (_, label) in pq.branches() {
            let f = label.factor_of(VariableRef::post(1)).expect("Y' recorded");
            assert!(f.contains(VariableRef::post(0)), "X' and Y' belong to one joint");
            // check one entry of the joint at X = true: Pr(x', y') = 0.8 * 0.9
            // and at X = false: 0.3 * 0.9
        }
        let mut ctx = Context::new();
        ctx.insert(VariableRef::pre(0), 0);
        let label = evaluate(&pq, &ctx).unwrap();
        let mut branch = Context::new();
        branch.insert(VariableRef::post(0), 0);
        branch.insert(VariableRef::post(1), 0);
        assert!((branch_probability(label, &branch) - 0.8 * 0.9).abs() < 1e-12);
    }

    #[test]
    fn plain_regression_refuses_correlated_actions() {
        let model = correlated_pair();
        let value_tree = node(VariableRef::pre(1), DecisionTree::Leaf(1.0), DecisionTree::Leaf(0.0));
        assert!(matches!(
            regress_uncorrelated(&model, &model.actions[0], &value_tree),
            Err(RegressionError::CorrelatedAction(_))
        ));
    }

    /// An uncorrelated two-variable model for comparing the two regression
    /// entry points.
    fn uncorrelated_pair() -> MdpModel {
        let x = VariableRef::pre(0);
        let y = VariableRef::pre(1);
        let cpt_x = Cpt::new(vec![x], node(x, leaf(0.8), leaf(0.3)));
        let cpt_y = Cpt::new(vec![x, y], node(y, leaf(1.0), node(x, leaf(0.6), leaf(0.0))));
        let action = ActionNetwork { name: "act".into(), cpts: vec![cpt_x, cpt_y] };
        MdpModel {
            variables: binary_vars(&["X", "Y"]),
            actions: vec![action],
            reward: node(VariableRef::pre(1), DecisionTree::Leaf(1.0), DecisionTree::Leaf(0.0)),
            discount: 0.9,
        }
    }

    #[test]
    fn correlated_entry_point_degenerates_to_plain_regression() {
        let model = uncorrelated_pair();
        let value_tree = node(
            VariableRef::pre(1),
            node(VariableRef::pre(0), DecisionTree::Leaf(3.0), DecisionTree::Leaf(2.0)),
            DecisionTree::Leaf(0.5),
        );
        let a = regress(&model, &model.actions[0], &value_tree).unwrap();
        let b = regress_uncorrelated(&model, &model.actions[0], &value_tree).unwrap();
        assert!(semantic_eq(&a, &b, 0.0, &model.variables).unwrap());
    }

    #[test]
    fn regression_skips_branches_with_zero_probability() {
        // Under Y = false the action never makes Y true, so the part of the
        // value tree behind Y' = true must not be regressed there.
        let model = uncorrelated_pair();
        let value_tree = node(
            VariableRef::pre(1),
            node(VariableRef::pre(0), DecisionTree::Leaf(3.0), DecisionTree::Leaf(2.0)),
            DecisionTree::Leaf(0.0),
        );
        let pq = regress(&model, &model.actions[0], &value_tree).unwrap();
        // Context Y=false, X=false: Pr(Y') is exactly zero, so X' stays
        // unrecorded there.
        let mut ctx = Context::new();
        ctx.insert(VariableRef::pre(0), 1);
        ctx.insert(VariableRef::pre(1), 1);
        let label = evaluate(&pq, &ctx).unwrap();
        assert!(label.records(VariableRef::post(1)));
        assert!(!label.records(VariableRef::post(0)));
    }

    /// Three variables with arcs X' -> Z', X' -> Y' and Z' -> Y'. The tree
    /// for Y' tests both of its post-action parents, so regressing a value
    /// tree over Y leaves two pending variables at once.
    fn correlated_chain() -> MdpModel {
        let x = VariableRef::pre(0);
        let x_post = VariableRef::post(0);
        let z_post = VariableRef::post(2);
        let cpt_x = Cpt::new(vec![x], node(x, leaf(0.8), leaf(0.3)));
        let cpt_y = Cpt::new(
            vec![x_post, z_post],
            node(x_post, node(z_post, leaf(0.9), leaf(0.6)), node(z_post, leaf(0.4), leaf(0.1))),
        );
        let cpt_z = Cpt::new(vec![x_post], node(x_post, leaf(0.7), leaf(0.2)));
        let action = ActionNetwork { name: "act".into(), cpts: vec![cpt_x, cpt_y, cpt_z] };
        MdpModel {
            variables: binary_vars(&["X", "Y", "Z"]),
            actions: vec![action],
            reward: node(VariableRef::pre(1), DecisionTree::Leaf(1.0), DecisionTree::Leaf(0.0)),
            discount: 0.9,
        }
    }

    #[test]
    fn guard_rejects_integrating_a_parent_before_its_descendant() {
        let model = correlated_chain();
        let value_tree = node(VariableRef::pre(1), DecisionTree::Leaf(5.0), DecisionTree::Leaf(0.0));
        // Both X' and Z' are pending while Y' is regressed. Forcing X'
        // first runs ahead of Z', which depends on it.
        let err =
            regress_with_elimination_order(&model, &model.actions[0], &value_tree, &[0], true);
        assert!(matches!(err, Err(RegressionError::OrderingViolation { .. })));
        // The standard order never trips the guard.
        regress(&model, &model.actions[0], &value_tree).unwrap();
    }

    #[test]
    fn chain_regression_matches_state_enumeration() {
        let model = correlated_chain();
        let value_tree = node(
            VariableRef::pre(1),
            node(VariableRef::pre(2), DecisionTree::Leaf(5.0), DecisionTree::Leaf(3.0)),
            DecisionTree::Leaf(0.0),
        );
        let action = &model.actions[0];
        let pq = regress(&model, action, &value_tree).unwrap();
        let q = finalize(&model, &pq, &value_tree, &model.reward, model.discount);
        let values: Vec<f64> = (0..8)
            .map(|i| {
                let state = index_to_state(&model.variables, i);
                *evaluate(&value_tree, &pre_context(&state)).unwrap()
            })
            .collect();
        for i in 0..8 {
            let state = index_to_state(&model.variables, i);
            let flat = flat_q(&model, action, &state, &values).unwrap();
            let got = *evaluate(&q, &pre_context(&state)).unwrap();
            assert!((got - flat).abs() < 1e-12, "state {state:?}: {got} vs {flat}");
        }
    }

    #[test]
    fn deterministic_effects_prune_unreachable_subtrees() {
        // Pr(X' | X = true) = 1. Under X = true the regression of Y' must
        // not branch on anything the X' = false case would need.
        let x = VariableRef::pre(0);
        let x_post = VariableRef::post(0);
        let w = VariableRef::pre(2);
        let cpt_x = Cpt::new(vec![x], node(x, leaf(1.0), leaf(0.3)));
        let cpt_y = Cpt::new(
            vec![x_post, w],
            node(x_post, leaf(0.9), node(w, leaf(0.7), leaf(0.1))),
        );
        let cpt_w = Cpt::new(vec![w], node(w, leaf(1.0), leaf(0.0)));
        let action = ActionNetwork { name: "act".into(), cpts: vec![cpt_x, cpt_y, cpt_w] };
        let model = MdpModel {
            variables: binary_vars(&["X", "Y", "W"]),
            actions: vec![action],
            reward: node(VariableRef::pre(1), DecisionTree::Leaf(1.0), DecisionTree::Leaf(0.0)),
            discount: 0.9,
        };
        let value_tree = node(VariableRef::pre(1), DecisionTree::Leaf(5.0), DecisionTree::Leaf(0.0));
        let pq = regress(&model, &model.actions[0], &value_tree).unwrap();
        let mut ctx = Context::new();
        ctx.insert(x, 0);
        let under_x = match &pq {
            DecisionTree::Node { test, children } if *test == x => &children[0],
            other => other,
        };
        assert!(
            !under_x.tested_vars().contains(&w),
            "the deterministic branch must not test W: {under_x:?}"
        );
    }

    #[test]
    fn elimination_order_positions_fall_back_to_index_order() {
        let order = EliminationOrder::custom(4, &[2], false);
        assert_eq!(order.position[2], 0);
        assert!(order.position[0] > order.position[2]);
        assert!(order.position[1] < order.position[3]);
    }
}
