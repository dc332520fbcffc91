fn main() {
    std::process::exit(sparse_recovery::cli::run_cli(std::env::args_os()));
}
