//! Decision trees over finite-domain variables and the algebra the rest of
//! the crate is built on: evaluation, reduction by a partial assignment,
//! merging several trees into one, and semantic comparison.
//!
//! A tree tests one variable per internal node and carries one child per
//! domain value, in the domain's declared order. No variable is tested twice
//! on a path; `reduce` and `merge` maintain that invariant and collapse
//! nodes whose children have become identical, so trees stay as small as
//! the function they represent allows.

use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// Which copy of a variable a reference denotes: its value before an action
/// is applied, or its value after.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Slice {
    Pre,
    Post,
}

/// A reference to a declared variable in one slice. `var` indexes the
/// model's variable table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VariableRef {
    pub var: usize,
    pub slice: Slice,
}

impl VariableRef {
    pub fn pre(var: usize) -> Self {
        VariableRef { var, slice: Slice::Pre }
    }

    pub fn post(var: usize) -> Self {
        VariableRef { var, slice: Slice::Post }
    }

    pub fn is_post(self) -> bool {
        self.slice == Slice::Post
    }

    /// The post-action counterpart of this variable.
    pub fn primed(self) -> Self {
        VariableRef::post(self.var)
    }
}

/// A declared variable: a name and an ordered domain of at least two values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Variable {
    pub name: String,
    pub values: Vec<String>,
}

impl Variable {
    pub fn binary(name: &str) -> Self {
        Variable {
            name: name.to_string(),
            values: vec!["true".to_string(), "false".to_string()],
        }
    }

    pub fn value_index(&self, value: &str) -> Option<usize> {
        self.values.iter().position(|v| v == value)
    }
}

/// A partial assignment of variables to domain value indices.
pub type Context = BTreeMap<VariableRef, usize>;

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("variable #{} ({:?}) is not assigned in the evaluation context", .0.var, .0.slice)]
    MissingAssignment(VariableRef),
    #[error("semantic comparison would enumerate more than {0} assignments")]
    EnumerationTooLarge(usize),
}

/// Cap on exhaustive enumeration in [`semantic_eq`].
pub const MAX_ENUMERATION: usize = 1 << 22;

/// A decision tree with leaves of type `L`. Children are ordered by the
/// tested variable's declared value order.
#[derive(Debug, Clone, PartialEq)]
pub enum DecisionTree<L> {
    Leaf(L),
    Node {
        test: VariableRef,
        children: Vec<DecisionTree<L>>,
    },
}

impl<L> DecisionTree<L> {
    pub fn leaf(payload: L) -> Self {
        DecisionTree::Leaf(payload)
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, DecisionTree::Leaf(_))
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            DecisionTree::Leaf(_) => 1,
            DecisionTree::Node { children, .. } => children.iter().map(|c| c.leaf_count()).sum(),
        }
    }

    /// Every variable tested anywhere in the tree.
    pub fn tested_vars(&self) -> BTreeSet<VariableRef> {
        let mut out = BTreeSet::new();
        self.collect_tested(&mut out);
        out
    }

    fn collect_tested(&self, out: &mut BTreeSet<VariableRef>) {
        if let DecisionTree::Node { test, children } = self {
            out.insert(*test);
            for c in children {
                c.collect_tested(out);
            }
        }
    }

    /// All root-to-leaf paths as (context, payload) pairs, left to right.
    pub fn branches(&self) -> Vec<(Context, &L)> {
        let mut out = Vec::new();
        let mut ctx = Context::new();
        self.collect_branches(&mut ctx, &mut out);
        out
    }

    fn collect_branches<'t>(&'t self, ctx: &mut Context, out: &mut Vec<(Context, &'t L)>) {
        match self {
            DecisionTree::Leaf(payload) => out.push((ctx.clone(), payload)),
            DecisionTree::Node { test, children } => {
                for (value, child) in children.iter().enumerate() {
                    ctx.insert(*test, value);
                    child.collect_branches(ctx, out);
                    ctx.remove(test);
                }
            }
        }
    }

    /// Rebuild the tree with every leaf payload mapped through `f`.
    pub fn map_leaves<M>(&self, f: &mut impl FnMut(&L) -> M) -> DecisionTree<M> {
        match self {
            DecisionTree::Leaf(payload) => DecisionTree::Leaf(f(payload)),
            DecisionTree::Node { test, children } => DecisionTree::Node {
                test: *test,
                children: children.iter().map(|c| c.map_leaves(f)).collect(),
            },
        }
    }
}

/// Build a node, collapsing it to its first child when all children are
/// identical.
pub(crate) fn collapse_node<L: PartialEq>(
    test: VariableRef,
    mut children: Vec<DecisionTree<L>>,
) -> DecisionTree<L> {
    if children.iter().skip(1).all(|c| *c == children[0]) {
        children.swap_remove(0)
    } else {
        DecisionTree::Node { test, children }
    }
}

/// Look up the payload the tree selects under `assignment`. Fails if a
/// tested variable is unassigned.
pub fn evaluate<'t, L>(
    tree: &'t DecisionTree<L>,
    assignment: &Context,
) -> Result<&'t L, TreeError> {
    match tree {
        DecisionTree::Leaf(payload) => Ok(payload),
        DecisionTree::Node { test, children } => match assignment.get(test) {
            Some(&value) => evaluate(&children[value], assignment),
            None => Err(TreeError::MissingAssignment(*test)),
        },
    }
}

/// Specialize a tree to a partial assignment: tests of assigned variables
/// are replaced by the matching subtree, repeated tests on a path are
/// removed, and nodes with identical children are collapsed.
pub fn reduce<L: Clone + PartialEq>(
    tree: &DecisionTree<L>,
    context: &Context,
    vars: &[Variable],
) -> DecisionTree<L> {
    let mut ctx = context.clone();
    reduce_inner(tree, &mut ctx, vars)
}

fn reduce_inner<L: Clone + PartialEq>(
    tree: &DecisionTree<L>,
    ctx: &mut Context,
    vars: &[Variable],
) -> DecisionTree<L> {
    match tree {
        DecisionTree::Leaf(payload) => DecisionTree::Leaf(payload.clone()),
        DecisionTree::Node { test, children } => {
            if let Some(&value) = ctx.get(test) {
                return reduce_inner(&children[value], ctx, vars);
            }
            let arity = vars[test.var].values.len();
            debug_assert_eq!(arity, children.len());
            let new_children = (0..arity)
                .map(|value| {
                    ctx.insert(*test, value);
                    let child = reduce_inner(&children[value], ctx, vars);
                    ctx.remove(test);
                    child
                })
                .collect();
            collapse_node(*test, new_children)
        }
    }
}

/// Descend through tests already fixed by `ctx`.
pub(crate) fn descend_fixed<'t, L>(mut tree: &'t DecisionTree<L>, ctx: &Context) -> &'t DecisionTree<L> {
    while let DecisionTree::Node { test, children } = tree {
        match ctx.get(test) {
            Some(&value) => tree = &children[value],
            None => break,
        }
    }
    tree
}

/// Merge several trees into one that makes every distinction any input
/// makes. Each leaf payload is `combine` applied to the input payloads
/// selected by that leaf's context, in input order.
pub fn merge<L, M, F>(
    trees: &[&DecisionTree<L>],
    vars: &[Variable],
    combine: &mut F,
) -> DecisionTree<M>
where
    M: PartialEq,
    F: FnMut(&[&L]) -> M,
{
    let mut ctx = Context::new();
    merge_in_ctx(trees, vars, &mut ctx, combine)
}

/// [`merge`] under an ambient partial assignment: tests fixed by `ctx` are
/// resolved instead of reproduced, which keeps grafted fragments free of
/// repeated tests.
pub(crate) fn merge_in_ctx<L, M, F>(
    trees: &[&DecisionTree<L>],
    vars: &[Variable],
    ctx: &mut Context,
    combine: &mut F,
) -> DecisionTree<M>
where
    M: PartialEq,
    F: FnMut(&[&L]) -> M,
{
    let current: Vec<&DecisionTree<L>> = trees.iter().map(|t| descend_fixed(t, ctx)).collect();
    let split = current.iter().find_map(|t| match t {
        DecisionTree::Node { test, .. } => Some(*test),
        DecisionTree::Leaf(_) => None,
    });
    match split {
        None => {
            let payloads: Vec<&L> = current
                .iter()
                .map(|t| match t {
                    DecisionTree::Leaf(p) => p,
                    DecisionTree::Node { .. } => unreachable!(),
                })
                .collect();
            DecisionTree::Leaf(combine(&payloads))
        }
        Some(test) => {
            let arity = vars[test.var].values.len();
            let children = (0..arity)
                .map(|value| {
                    ctx.insert(test, value);
                    let child = merge_in_ctx(&current, vars, ctx, combine);
                    ctx.remove(&test);
                    child
                })
                .collect();
            collapse_node(test, children)
        }
    }
}

/// Two-tree merge with differently typed payloads.
pub fn merge2<A, B, M, F>(
    left: &DecisionTree<A>,
    right: &DecisionTree<B>,
    vars: &[Variable],
    combine: &mut F,
) -> DecisionTree<M>
where
    M: PartialEq,
    F: FnMut(&A, &B) -> M,
{
    let mut ctx = Context::new();
    merge2_inner(left, right, vars, &mut ctx, combine)
}

fn merge2_inner<A, B, M, F>(
    left: &DecisionTree<A>,
    right: &DecisionTree<B>,
    vars: &[Variable],
    ctx: &mut Context,
    combine: &mut F,
) -> DecisionTree<M>
where
    M: PartialEq,
    F: FnMut(&A, &B) -> M,
{
    let left = descend_fixed(left, ctx);
    let right = descend_fixed(right, ctx);
    let split = match (left, right) {
        (DecisionTree::Leaf(a), DecisionTree::Leaf(b)) => return DecisionTree::Leaf(combine(a, b)),
        (DecisionTree::Node { test, .. }, _) => *test,
        (_, DecisionTree::Node { test, .. }) => *test,
    };
    let arity = vars[split.var].values.len();
    let children = (0..arity)
        .map(|value| {
            ctx.insert(split, value);
            let child = merge2_inner(left, right, vars, ctx, combine);
            ctx.remove(&split);
            child
        })
        .collect();
    collapse_node(split, children)
}

/// Replace each leaf by a subtree built from the leaf's context and payload.
/// The running context covers the path from the root, so `f` can graft
/// fragments that are already specialized to it.
pub fn try_map_leaves_ctx<L, M, E, F>(
    tree: &DecisionTree<L>,
    ctx: &mut Context,
    vars: &[Variable],
    f: &mut F,
) -> Result<DecisionTree<M>, E>
where
    M: PartialEq,
    F: FnMut(&Context, &L) -> Result<DecisionTree<M>, E>,
{
    match tree {
        DecisionTree::Leaf(payload) => f(ctx, payload),
        DecisionTree::Node { test, children } => {
            if let Some(&value) = ctx.get(test) {
                return try_map_leaves_ctx(&children[value], ctx, vars, f);
            }
            let mut new_children = Vec::with_capacity(children.len());
            for (value, child) in children.iter().enumerate() {
                ctx.insert(*test, value);
                let result = try_map_leaves_ctx(child, ctx, vars, f);
                ctx.remove(test);
                new_children.push(result?);
            }
            Ok(collapse_node(*test, new_children))
        }
    }
}

/// Payload types that admit a numeric distance, used by [`semantic_eq`].
pub trait LeafDistance {
    fn leaf_distance(&self, other: &Self) -> f64;
}

impl LeafDistance for f64 {
    fn leaf_distance(&self, other: &Self) -> f64 {
        (self - other).abs()
    }
}

/// Distributions and other fixed-length numeric payloads.
impl LeafDistance for Vec<f64> {
    fn leaf_distance(&self, other: &Self) -> f64 {
        if self.len() != other.len() {
            return f64::INFINITY;
        }
        self.iter()
            .zip(other)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Do two trees denote the same function, up to `tol` in leaf distance?
/// Checked by exhaustive enumeration over the variables either tree tests.
pub fn semantic_eq<L: LeafDistance>(
    a: &DecisionTree<L>,
    b: &DecisionTree<L>,
    tol: f64,
    vars: &[Variable],
) -> Result<bool, TreeError> {
    let tested: Vec<VariableRef> = a.tested_vars().union(&b.tested_vars()).copied().collect();
    let mut count: usize = 1;
    for r in &tested {
        count = count
            .checked_mul(vars[r.var].values.len())
            .filter(|&c| c <= MAX_ENUMERATION)
            .ok_or(TreeError::EnumerationTooLarge(MAX_ENUMERATION))?;
    }
    let mut ctx = Context::new();
    semantic_eq_inner(a, b, tol, vars, &tested, &mut ctx)
}

fn semantic_eq_inner<L: LeafDistance>(
    a: &DecisionTree<L>,
    b: &DecisionTree<L>,
    tol: f64,
    vars: &[Variable],
    rest: &[VariableRef],
    ctx: &mut Context,
) -> Result<bool, TreeError> {
    match rest.split_first() {
        None => {
            let pa = evaluate(a, ctx)?;
            let pb = evaluate(b, ctx)?;
            Ok(pa.leaf_distance(pb) <= tol)
        }
        Some((&r, rest)) => {
            for value in 0..vars[r.var].values.len() {
                ctx.insert(r, value);
                let ok = semantic_eq_inner(a, b, tol, vars, rest, ctx)?;
                ctx.remove(&r);
                if !ok {
                    return Ok(false);
                }
            }
            Ok(true)
        }
    }
}
