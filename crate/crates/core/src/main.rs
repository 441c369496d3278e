fn main() {
    std::process::exit(adapcsi::cli::main_with_args(std::env::args_os()));
}
