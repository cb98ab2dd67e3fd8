fn main() {
    std::process::exit(factdial::cli::main_with_args(std::env::args_os()));
}
