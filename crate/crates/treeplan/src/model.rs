//! The planning problem itself: variables with finite domains, one
//! two-slice network per action whose conditional distributions are stored
//! as decision trees, a reward tree over pre-action variables, and a
//! discount factor.
//!
//! Action networks may contain arcs between post-action variables, so the
//! effects of an action on different variables can be correlated. The arcs
//! among post-action variables must be acyclic; [`post_action_ordering`]
//! produces the elimination order the regression code relies on, and
//! [`blocked`] answers separation queries against the full two-slice graph.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::trees::{DecisionTree, Variable, VariableRef};

/// Conditional probability tree for one post-action variable. Leaves hold a
/// distribution over the variable's domain, in domain order. `parents`
/// declares the scope; the tree may test any subset of it.
#[derive(Debug, Clone, PartialEq)]
pub struct Cpt {
    pub parents: Vec<VariableRef>,
    pub tree: DecisionTree<Vec<f64>>,
}

impl Cpt {
    pub fn new(parents: Vec<VariableRef>, tree: DecisionTree<Vec<f64>>) -> Self {
        Cpt { parents, tree }
    }
}

/// Two-slice network for one action: a conditional probability tree per
/// variable, indexed like the model's variable table.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionNetwork {
    pub name: String,
    pub cpts: Vec<Cpt>,
}

impl ActionNetwork {
    pub fn cpt(&self, var: usize) -> &Cpt {
        &self.cpts[var]
    }

    /// Pre-action parents of `var`'s post-action copy.
    pub fn pre_parents(&self, var: usize) -> Vec<usize> {
        self.cpts[var]
            .parents
            .iter()
            .filter(|p| !p.is_post())
            .map(|p| p.var)
            .collect()
    }

    /// Post-action parents of `var`'s post-action copy, i.e. the sources of
    /// arcs within the post-action slice.
    pub fn intra_parents(&self, var: usize) -> Vec<usize> {
        self.cpts[var]
            .parents
            .iter()
            .filter(|p| p.is_post())
            .map(|p| p.var)
            .collect()
    }

    /// Variables whose post-action copy has `var`'s post-action copy as a
    /// parent.
    pub fn intra_children(&self, var: usize) -> Vec<usize> {
        (0..self.cpts.len())
            .filter(|&y| self.intra_parents(y).contains(&var))
            .collect()
    }

    /// Transitive closure of [`intra_children`](Self::intra_children).
    pub fn intra_descendants(&self, var: usize) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        let mut stack = self.intra_children(var);
        while let Some(y) = stack.pop() {
            if out.insert(y) {
                stack.extend(self.intra_children(y));
            }
        }
        out
    }

    pub fn has_intra_arcs(&self) -> bool {
        (0..self.cpts.len()).any(|v| !self.intra_parents(v).is_empty())
    }
}

/// A factored decision problem with tree-structured dynamics and reward.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpModel {
    pub variables: Vec<Variable>,
    pub actions: Vec<ActionNetwork>,
    pub reward: DecisionTree<f64>,
    pub discount: f64,
}

impl MdpModel {
    pub fn n_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn action_index(&self, name: &str) -> Option<usize> {
        self.actions.iter().position(|a| a.name == name)
    }

    /// Number of joint assignments of the pre-action variables, or `None`
    /// on overflow.
    pub fn state_count(&self) -> Option<usize> {
        self.variables
            .iter()
            .try_fold(1usize, |acc, v| acc.checked_mul(v.values.len()))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("arcs among post-action variables of `{0}` form a cycle")]
    CyclicNetwork(String),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("unknown action `{0}`")]
    UnknownAction(String),
}

/// One problem found by [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub location: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

fn diag(diags: &mut Vec<Diagnostic>, location: &str, message: String) {
    diags.push(Diagnostic { location: location.to_string(), message });
}

/// Check tree shape against the variable table: tests must name declared
/// variables and nodes must have one child per domain value.
fn check_tree_shape<L>(
    tree: &DecisionTree<L>,
    vars: &[Variable],
    allow_post: bool,
    location: &str,
    diags: &mut Vec<Diagnostic>,
) {
    if let DecisionTree::Node { test, children } = tree {
        if test.var >= vars.len() {
            diag(diags, location, format!("test of undeclared variable #{}", test.var));
            return;
        }
        if test.is_post() && !allow_post {
            diag(
                diags,
                location,
                format!("tests post-action value of `{}`", vars[test.var].name),
            );
        }
        let arity = vars[test.var].values.len();
        if children.len() != arity {
            diag(
                diags,
                location,
                format!(
                    "test of `{}` has {} branches, domain has {} values",
                    vars[test.var].name,
                    children.len(),
                    arity
                ),
            );
            return;
        }
        for child in children {
            check_tree_shape(child, vars, allow_post, location, diags);
        }
    }
}

const DISTRIBUTION_TOL: f64 = 1e-9;

/// Validate a model, returning every problem found. An empty result means
/// the model is well formed. A model with no variables is legal; it has a
/// single state.
pub fn validate(model: &MdpModel) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let vars = &model.variables;

    let mut seen = BTreeSet::new();
    for v in vars {
        if v.values.len() < 2 {
            diag(&mut diags, &format!("variable {}", v.name), "domain has fewer than two values".to_string());
        }
        if !seen.insert(v.name.as_str()) {
            diag(&mut diags, &format!("variable {}", v.name), "duplicate variable name".to_string());
        }
    }

    if !(0.0..1.0).contains(&model.discount) {
        diag(
            &mut diags,
            "discount",
            format!("{} is outside [0, 1)", model.discount),
        );
    }

    check_tree_shape(&model.reward, vars, false, "reward", &mut diags);

    let mut seen_actions = BTreeSet::new();
    for action in &model.actions {
        let loc_action = format!("action {}", action.name);
        if !seen_actions.insert(action.name.as_str()) {
            diag(&mut diags, &loc_action, "duplicate action name".to_string());
        }
        if action.cpts.len() != vars.len() {
            diag(
                &mut diags,
                &loc_action,
                format!("has {} distribution trees for {} variables", action.cpts.len(), vars.len()),
            );
            continue;
        }
        for (x, cpt) in action.cpts.iter().enumerate() {
            let loc = format!("action {}, variable {}", action.name, vars[x].name);
            let mut parent_set = BTreeSet::new();
            for p in &cpt.parents {
                if p.var >= vars.len() {
                    diag(&mut diags, &loc, format!("parent refers to undeclared variable #{}", p.var));
                    continue;
                }
                if !parent_set.insert(*p) {
                    diag(&mut diags, &loc, format!("duplicate parent `{}`", vars[p.var].name));
                }
                if *p == VariableRef::post(x) {
                    diag(&mut diags, &loc, "variable listed as its own parent".to_string());
                }
            }
            check_tree_shape(&cpt.tree, vars, true, &loc, &mut diags);
            for t in cpt.tree.tested_vars() {
                if t.var < vars.len() && !cpt.parents.contains(&t) {
                    diag(
                        &mut diags,
                        &loc,
                        format!(
                            "tests `{}{}` which is not a declared parent",
                            vars[t.var].name,
                            if t.is_post() { "'" } else { "" }
                        ),
                    );
                }
            }
            let arity = vars[x].values.len();
            for (_, dist) in cpt.tree.branches() {
                if dist.len() != arity {
                    diag(
                        &mut diags,
                        &loc,
                        format!("distribution has {} entries, domain has {} values", dist.len(), arity),
                    );
                    continue;
                }
                if dist.iter().any(|&p| p < 0.0) {
                    diag(&mut diags, &loc, format!("negative probability in {:?}", dist));
                }
                let total: f64 = dist.iter().sum();
                if (total - 1.0).abs() > DISTRIBUTION_TOL {
                    diag(&mut diags, &loc, format!("distribution sums to {}", total));
                }
            }
        }
        if post_action_ordering(action).is_err() {
            diag(
                &mut diags,
                &loc_action,
                "arcs among post-action variables form a cycle".to_string(),
            );
        }
    }

    diags
}

/// Order in which post-action variables can be eliminated: every variable
/// appears after all of its post-slice children, with remaining ties broken
/// by declaration order.
pub fn post_action_ordering(action: &ActionNetwork) -> Result<Vec<usize>, ModelError> {
    let n = action.cpts.len();
    let children: Vec<Vec<usize>> = (0..n).map(|v| action.intra_children(v)).collect();
    let mut emitted = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let next = (0..n)
            .find(|&v| !emitted[v] && children[v].iter().all(|&c| emitted[c]));
        match next {
            Some(v) => {
                emitted[v] = true;
                order.push(v);
            }
            None => return Err(ModelError::CyclicNetwork(action.name.clone())),
        }
    }
    Ok(order)
}

/// Is every path between `src` and `dst` in the action's two-slice network
/// blocked once the `evidence` variables are observed? Answered on the
/// moralized ancestral graph: a positive answer is a sound independence
/// claim, a negative one only means some path is open in the graph.
pub fn blocked(
    action: &ActionNetwork,
    src: VariableRef,
    dst: VariableRef,
    evidence: &BTreeSet<VariableRef>,
) -> bool {
    if src == dst {
        return false;
    }
    let n = action.cpts.len();
    let idx = |r: VariableRef| r.var + if r.is_post() { n } else { 0 };

    // Ancestral closure of the endpoints and evidence. Pre-action variables
    // are roots; the parents of post-action node n+v are v's declared
    // parents.
    let mut ancestral = BTreeSet::new();
    let mut stack: Vec<usize> = Vec::new();
    for seed in [idx(src), idx(dst)].into_iter().chain(evidence.iter().map(|&e| idx(e))) {
        if ancestral.insert(seed) {
            stack.push(seed);
        }
    }
    while let Some(v) = stack.pop() {
        if v >= n {
            for p in &action.cpts[v - n].parents {
                let pi = idx(*p);
                if ancestral.insert(pi) {
                    stack.push(pi);
                }
            }
        }
    }

    // Moralize: undirected parent-child edges plus edges between co-parents.
    let mut adj: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    let connect = |a: usize, b: usize, adj: &mut BTreeMap<usize, BTreeSet<usize>>| {
        adj.entry(a).or_default().insert(b);
        adj.entry(b).or_default().insert(a);
    };
    for &v in &ancestral {
        if v < n {
            continue;
        }
        let parents: Vec<usize> = action.cpts[v - n].parents.iter().map(|&p| idx(p)).collect();
        for (i, &p) in parents.iter().enumerate() {
            connect(p, v, &mut adj);
            for &q in &parents[i + 1..] {
                connect(p, q, &mut adj);
            }
        }
    }

    // Delete evidence nodes, then look for a path.
    let removed: BTreeSet<usize> = evidence.iter().map(|&e| idx(e)).collect();
    let start = idx(src);
    let goal = idx(dst);
    if removed.contains(&start) || removed.contains(&goal) {
        return true;
    }
    let mut visited = BTreeSet::new();
    visited.insert(start);
    let mut queue = vec![start];
    while let Some(v) = queue.pop() {
        if v == goal {
            return false;
        }
        if let Some(neighbors) = adj.get(&v) {
            for &w in neighbors {
                if !removed.contains(&w) && visited.insert(w) {
                    queue.push(w);
                }
            }
        }
    }
    true
}
