fn main() {
    std::process::exit(modumech::cli::main_with_args(std::env::args_os()));
}
