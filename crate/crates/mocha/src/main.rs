fn main() {
    std::process::exit(mocha::cli::main_with_args(std::env::args().collect()));
}
