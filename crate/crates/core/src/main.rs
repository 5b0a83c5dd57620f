fn main() {
    std::process::exit(mcuplan::cli::main_with_args(std::env::args_os()));
}
