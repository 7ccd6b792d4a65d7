fn main() {
    std::process::exit(morley::cli::main_with_args(std::env::args_os()));
}
