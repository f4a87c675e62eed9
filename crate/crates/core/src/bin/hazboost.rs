fn main() {
    std::process::exit(hazboost::cli::main_with_args(std::env::args_os()));
}
