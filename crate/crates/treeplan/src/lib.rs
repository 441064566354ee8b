//! Exact planning for discounted, fully observable factored MDPs whose
//! actions are two-slice Bayes nets with decision-tree CPTs.
//!
//! The solver never enumerates the flat state space. Value functions,
//! rewards and policies are all decision trees over the state variables, and
//! a Bellman backup is performed symbolically: each action's effect trees
//! are grafted onto the value tree, leaf by leaf, producing a Q-tree that
//! only distinguishes the state regions the value function actually cares
//! about. Arcs between post-action variables (correlated action effects)
//! are handled by keeping small joint distributions at the leaves instead
//! of assuming effects independent.
//!
//! Module map:
//!
//! * [`trees`] - decision trees and their algebra (evaluate, reduce, merge).
//! * [`model`] - variables, per-action networks, whole models, validation,
//!   elimination orderings and d-separation.
//! * [`regression`] - symbolic Bellman backups: factor sets, the grafting
//!   machinery, and Q-tree construction.
//! * [`solver`] - value iteration, successive approximation and modified
//!   policy iteration on top of the regression primitives.
//! * [`oracle`] - flat-state reference implementations used to cross-check
//!   the structured algorithms on small models.
//! * [`io`] - the text model format, the random model generator and DOT
//!   export.
//! * [`cli`] - the `treeplan` command line front end.

pub mod cli;
pub mod io;
pub mod model;
pub mod oracle;
pub mod regression;
pub mod solver;
pub mod trees;
