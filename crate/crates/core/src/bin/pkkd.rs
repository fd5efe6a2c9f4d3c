fn main() {
    std::process::exit(pkkd::cli::main_with_args(std::env::args_os()));
}
