fn main() {
    std::process::exit(shapley_royalty::cli::run(std::env::args_os()));
}
