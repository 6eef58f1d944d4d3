use std::process::exit;

fn main() {
    exit(flowlab::cli::run(std::env::args_os()));
}
