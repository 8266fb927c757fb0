fn main() {
    std::process::exit(equiboost::cli::main_with(std::env::args_os()));
}
