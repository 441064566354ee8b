//! Seeded random model generation, used by the test batteries and the
//! `gen` subcommand. Probabilities come from an eleven-point grid so that
//! exact zeros and ones occur often enough to exercise every pruning path.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{ActionNetwork, Cpt, MdpModel};
use crate::trees::{collapse_node, DecisionTree, Variable, VariableRef};

#[derive(Debug, Clone)]
pub struct GenParams {
    pub n_vars: usize,
    pub n_actions: usize,
    pub max_parents: usize,
    pub max_intra_arcs: usize,
    pub reward_vars: usize,
    pub seed: u64,
}

impl GenParams {
    pub fn new(n_vars: usize, n_actions: usize, max_intra_arcs: usize, seed: u64) -> Self {
        GenParams {
            n_vars,
            n_actions,
            max_parents: 3,
            max_intra_arcs,
            reward_vars: n_vars.min(3),
            seed,
        }
    }
}

fn grid_probability(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let i = rng.gen_range(0..=10);
    (i as f64 / 10.0, (10 - i) as f64 / 10.0)
}

fn random_distribution(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (p, q) = grid_probability(rng);
    vec![p, q]
}

/// Random tree testing a prefix of `refs` (a fresh shuffle per call site),
/// stopping early at random. Identical children collapse, so the declared
/// structure can be sparser than `refs`.
fn random_tree<L: Clone + PartialEq>(
    rng: &mut ChaCha8Rng,
    refs: &[VariableRef],
    leaf: &mut impl FnMut(&mut ChaCha8Rng) -> L,
) -> DecisionTree<L> {
    if refs.is_empty() || rng.gen_bool(0.35) {
        return DecisionTree::Leaf(leaf(rng));
    }
    let test = refs[0];
    let children = (0..2).map(|_| random_tree(rng, &refs[1..], leaf)).collect();
    collapse_node(test, children)
}

fn binary_variables(n: usize) -> Vec<Variable> {
    (0..n).map(|i| Variable::binary(&format!("X{i}"))).collect()
}

/// Random intra-action arcs, acyclic by construction: a shuffled order is
/// drawn and arcs only ever point from earlier to later variables in it.
fn random_arcs(rng: &mut ChaCha8Rng, n_vars: usize, max_arcs: usize) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..n_vars).collect();
    order.shuffle(rng);
    let mut candidates = Vec::new();
    for i in 0..n_vars {
        for j in (i + 1)..n_vars {
            candidates.push((order[i], order[j]));
        }
    }
    candidates.shuffle(rng);
    let n_arcs = rng.gen_range(0..=max_arcs.min(candidates.len()));
    candidates.truncate(n_arcs);
    candidates
}

fn random_cpt(
    rng: &mut ChaCha8Rng,
    var: usize,
    n_vars: usize,
    max_parents: usize,
    intra_parents: &[usize],
) -> Cpt {
    let mut refs: Vec<VariableRef> = intra_parents.iter().map(|&p| VariableRef::post(p)).collect();
    let mut pre: Vec<usize> = (0..n_vars).collect();
    pre.shuffle(rng);
    let n_pre = rng.gen_range(1..=max_parents.max(1));
    refs.extend(pre.into_iter().take(n_pre).map(VariableRef::pre));
    refs.shuffle(rng);
    // Stable sort after the shuffle: post-action parents first, so sampled
    // arcs usually survive the early-leaf cutoff and the variable's own
    // prior value comes next for persistence-like structure.
    refs.sort_by_key(|r| (!r.is_post(), *r != VariableRef::pre(var)));
    let tree = random_tree(rng, &refs, &mut random_distribution);
    let parents = tree.tested_vars().into_iter().collect();
    Cpt::new(parents, tree)
}

/// Deterministic random model: same parameters, same model, and the
/// serialized document is byte-identical run to run.
pub fn random_model(params: &GenParams) -> MdpModel {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let variables = binary_variables(params.n_vars);

    let mut reward_refs: Vec<usize> = (0..params.n_vars).collect();
    reward_refs.shuffle(&mut rng);
    reward_refs.truncate(params.reward_vars);
    let reward_refs: Vec<VariableRef> = reward_refs.into_iter().map(VariableRef::pre).collect();
    let reward = random_tree(&mut rng, &reward_refs, &mut |rng: &mut ChaCha8Rng| {
        rng.gen_range(0..=10) as f64
    });

    let mut actions = Vec::with_capacity(params.n_actions);
    for a in 0..params.n_actions {
        let arcs = random_arcs(&mut rng, params.n_vars, params.max_intra_arcs);
        let cpts = (0..params.n_vars)
            .map(|v| {
                let intra: Vec<usize> =
                    arcs.iter().filter(|&&(_, to)| to == v).map(|&(from, _)| from).collect();
                random_cpt(&mut rng, v, params.n_vars, params.max_parents, &intra)
            })
            .collect();
        actions.push(ActionNetwork { name: format!("a{a}"), cpts });
    }

    MdpModel { variables, actions, reward, discount: 0.9 }
}

/// A family for scaling checks: the reward and all interesting dynamics
/// live on the first `k` variables, identically for every `n`; the
/// remaining variables carry independent noise that no core variable ever
/// sees. Structured solving of the `n`-variable instance should therefore
/// cost the same as the `k`-variable one.
pub fn k_of_n_model(k: usize, n: usize, seed: u64) -> MdpModel {
    assert!(k <= n);
    let mut core_rng = ChaCha8Rng::seed_from_u64(seed);
    let variables = binary_variables(n);

    let core_refs: Vec<VariableRef> = (0..k).map(VariableRef::pre).collect();
    let mut shuffled = core_refs.clone();
    shuffled.shuffle(&mut core_rng);
    let reward = random_tree(&mut core_rng, &shuffled, &mut |rng: &mut ChaCha8Rng| {
        rng.gen_range(0..=10) as f64
    });

    let n_actions = 2;
    let mut actions = Vec::with_capacity(n_actions);
    for a in 0..n_actions {
        let arcs = random_arcs(&mut core_rng, k, k.saturating_sub(1).min(2));
        let mut cpts: Vec<Cpt> = (0..k)
            .map(|v| {
                let intra: Vec<usize> =
                    arcs.iter().filter(|&&(_, to)| to == v).map(|&(from, _)| from).collect();
                random_cpt(&mut core_rng, v, k, 2, &intra)
            })
            .collect();
        // Noise variables drift on their own, with statistics drawn from a
        // stream that cannot disturb the core draws above.
        let mut noise_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6e6f6973 ^ ((a as u64) << 32));
        for v in k..n {
            let me = VariableRef::pre(v);
            let (p, q) = grid_probability(&mut noise_rng);
            let (r, s) = grid_probability(&mut noise_rng);
            let tree = collapse_node(
                me,
                vec![DecisionTree::Leaf(vec![p, q]), DecisionTree::Leaf(vec![r, s])],
            );
            let parents = tree.tested_vars().into_iter().collect();
            cpts.push(Cpt::new(parents, tree));
        }
        actions.push(ActionNetwork { name: format!("a{a}"), cpts });
    }

    MdpModel { variables, actions, reward, discount: 0.9 }
}
