//! Command-line front end. Everything routes through [`run_cli`] so tests
//! can drive it with captured output; the binary is a thin wrapper.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::io::dot::{export_dot, sig6};
use crate::io::gen::{random_model, GenParams};
use crate::io::{parse_model, parse_value_tree, serialize_model, write_tree};
use crate::model::MdpModel;
use crate::oracle::{compare, flat_value_iteration, index_to_state};
use crate::solver::{modified_policy_iteration, value_iteration, SolveResult};
use crate::trees::DecisionTree;

const EXIT_OK: i32 = 0;
const EXIT_INVALID: i32 = 1;
const EXIT_MISMATCH: i32 = 2;
const EXIT_USAGE: i32 = 64;

#[derive(Parser)]
#[command(name = "treeplan", disable_version_flag = true)]
#[command(about = "Structured solver for factored Markov decision problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a model file.
    Validate { file: PathBuf },
    /// Regress a value tree through one action and print the Q-tree.
    Regress {
        file: PathBuf,
        /// Action to regress through.
        #[arg(long)]
        action: String,
        /// File holding a value tree; defaults to the model's reward tree.
        #[arg(long)]
        value: Option<PathBuf>,
    },
    /// Solve the model and print the value tree, policy tree and iterations.
    Solve {
        file: PathBuf,
        #[command(flatten)]
        accuracy: Accuracy,
        /// Use modified policy iteration instead of value iteration.
        #[arg(long)]
        mpi: bool,
        /// Evaluation sweeps per improvement step (with --mpi).
        #[arg(long, default_value_t = 5)]
        eval_steps: usize,
        /// Solve by flat state enumeration instead of trees.
        #[arg(long)]
        flat: bool,
        /// Directory to write value.dot and policy.dot into.
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// Solve structurally and flat, then report disagreements.
    Compare {
        file: PathBuf,
        #[command(flatten)]
        accuracy: Accuracy,
        /// Largest value difference tolerated at any state.
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        /// Q-value slack tolerated when judging the policy's actions.
        #[arg(long, default_value_t = 1e-6)]
        policy_tol: f64,
    },
    /// Emit a random model document.
    Gen {
        #[arg(long)]
        vars: usize,
        #[arg(long)]
        actions: usize,
        #[arg(long, default_value_t = 2)]
        intra_arcs: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        max_parents: usize,
        /// Variables the reward may test; defaults to at most three.
        #[arg(long)]
        reward_vars: Option<usize>,
    },
}

#[derive(Args)]
struct Accuracy {
    #[arg(long, default_value_t = 1e-4)]
    epsilon: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iters: usize,
}

/// Run the command line and return the process exit code. `args` is the
/// full argument vector, program name included.
pub fn run_cli(args: &[String], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{e}");
                    EXIT_USAGE
                }
            };
        }
    };
    match run_command(cli.command, out) {
        Ok(code) => code,
        Err(message) => {
            let _ = writeln!(err, "error: {message}");
            EXIT_INVALID
        }
    }
}

fn load_model(path: &Path) -> Result<MdpModel, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    parse_model(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn print_value_tree(out: &mut dyn Write, label: &str, model: &MdpModel, tree: &DecisionTree<f64>) {
    let mut text = String::new();
    write_tree(&mut text, tree, &model.variables, &mut |v: &f64| format!("{v}"));
    let _ = writeln!(out, "{label} {text}");
}

fn run_command(command: Command, out: &mut dyn Write) -> Result<i32, String> {
    match command {
        Command::Validate { file } => {
            let text = std::fs::read_to_string(&file)
                .map_err(|e| format!("cannot read {}: {e}", file.display()))?;
            match parse_model(&text) {
                Ok(model) => {
                    let _ = writeln!(
                        out,
                        "ok: {} variables, {} actions",
                        model.variables.len(),
                        model.actions.len()
                    );
                    Ok(EXIT_OK)
                }
                Err(e) => Err(format!("{}: {e}", file.display())),
            }
        }
        Command::Regress { file, action, value } => {
            let model = load_model(&file)?;
            let a = model
                .action_index(&action)
                .ok_or_else(|| format!("model declares no action `{action}`"))?;
            let value_tree = match value {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
                    parse_value_tree(&text, &model).map_err(|e| format!("{}: {e}", path.display()))?
                }
                None => model.reward.clone(),
            };
            let pq = crate::regression::regress(&model, &model.actions[a], &value_tree)
                .map_err(|e| e.to_string())?;
            let q =
                crate::regression::finalize(&model, &pq, &value_tree, &model.reward, model.discount);
            print_value_tree(out, "q", &model, &q);
            Ok(EXIT_OK)
        }
        Command::Solve { file, accuracy, mpi, eval_steps, flat, dot } => {
            let model = load_model(&file)?;
            if model.actions.is_empty() {
                return Err("model declares no actions".into());
            }
            if flat {
                return solve_flat(&model, &accuracy, out);
            }
            let result: SolveResult = if mpi {
                modified_policy_iteration(&model, accuracy.epsilon, eval_steps, accuracy.max_iters)
            } else {
                value_iteration(&model, accuracy.epsilon, accuracy.max_iters)
            }
            .map_err(|e| e.to_string())?;
            print_value_tree(out, "value", &model, &result.value);
            let named = result.policy.map_leaves(&mut |&a| model.actions[a].name.clone());
            let mut text = String::new();
            write_tree(&mut text, &named, &model.variables, &mut |n: &String| n.clone());
            let _ = writeln!(out, "policy {text}");
            let _ = writeln!(out, "iterations {}", result.iterations);
            let _ = writeln!(out, "converged {}", result.converged);
            if let Some(dir) = dot {
                std::fs::create_dir_all(&dir)
                    .map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
                let value_dot =
                    export_dot(&result.value, &model.variables, "value", &mut |v| sig6(*v));
                let policy_dot =
                    export_dot(&named, &model.variables, "policy", &mut |n: &String| n.clone());
                for (name, content) in [("value.dot", value_dot), ("policy.dot", policy_dot)] {
                    let path = dir.join(name);
                    std::fs::write(&path, content)
                        .map_err(|e| format!("cannot write {}: {e}", path.display()))?;
                    let _ = writeln!(out, "wrote {}", path.display());
                }
            }
            Ok(EXIT_OK)
        }
        Command::Compare { file, accuracy, tol, policy_tol } => {
            let model = load_model(&file)?;
            if model.actions.is_empty() {
                return Err("model declares no actions".into());
            }
            let result = value_iteration(&model, accuracy.epsilon, accuracy.max_iters)
                .map_err(|e| e.to_string())?;
            let report = compare(
                &model,
                &result.value,
                &result.policy,
                accuracy.epsilon,
                tol,
                policy_tol,
                None,
            )
            .map_err(|e| e.to_string())?;
            let _ = writeln!(out, "states {}", report.states);
            let _ = writeln!(out, "iterations {}", report.iterations);
            let _ = writeln!(out, "max value gap {:e}", report.max_value_gap);
            if let Some(state) = &report.worst_state {
                let _ = writeln!(out, "worst state {}", format_state(&model, state));
            }
            let _ = writeln!(out, "policy agrees {}", report.policy_agrees);
            if let Some(state) = &report.first_policy_mismatch {
                let _ = writeln!(out, "first policy mismatch {}", format_state(&model, state));
            }
            let _ = writeln!(out, "pass {}", report.pass);
            Ok(if report.pass { EXIT_OK } else { EXIT_MISMATCH })
        }
        Command::Gen { vars, actions, intra_arcs, seed, max_parents, reward_vars } => {
            if vars == 0 || actions == 0 {
                return Err("--vars and --actions must be positive".into());
            }
            let params = GenParams {
                n_vars: vars,
                n_actions: actions,
                max_parents,
                max_intra_arcs: intra_arcs,
                reward_vars: reward_vars.unwrap_or(vars.min(3)).min(vars),
                seed,
            };
            let _ = write!(out, "{}", serialize_model(&random_model(&params)));
            Ok(EXIT_OK)
        }
    }
}

fn format_state(model: &MdpModel, state: &[usize]) -> String {
    state
        .iter()
        .zip(&model.variables)
        .map(|(&value, var)| format!("{}={}", var.name, var.values[value]))
        .collect::<Vec<_>>()
        .join(" ")
}

fn solve_flat(model: &MdpModel, accuracy: &Accuracy, out: &mut dyn Write) -> Result<i32, String> {
    let solution = flat_value_iteration(model, accuracy.epsilon, accuracy.max_iters, None)
        .map_err(|e| e.to_string())?;
    let states = solution.values.len();
    let _ = writeln!(out, "states {states}");
    let _ = writeln!(out, "iterations {}", solution.iterations);
    let _ = writeln!(out, "converged {}", solution.converged);
    if states <= 64 {
        for i in 0..states {
            let state = index_to_state(&model.variables, i);
            let _ = writeln!(
                out,
                "state {} value {} action {}",
                format_state(model, &state),
                sig6(solution.values[i]),
                model.actions[solution.policy[i]].name
            );
        }
    }
    Ok(EXIT_OK)
}
