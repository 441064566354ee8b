use std::process::exit;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let code = treeplan::cli::run_cli(&args, &mut std::io::stdout(), &mut std::io::stderr());
    exit(code);
}
