fn main() {
    std::process::exit(atmle::cli::main_with_args(std::env::args_os()));
}
