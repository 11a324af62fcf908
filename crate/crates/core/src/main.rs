fn main() {
    std::process::exit(pt_core::cli::run_cli(std::env::args_os()));
}
