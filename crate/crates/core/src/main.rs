fn main() {
    std::process::exit(slowenv::cli::main_with_args(std::env::args_os()));
}
