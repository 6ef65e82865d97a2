fn main() {
    std::process::exit(sgnn_cli::main_with_args(std::env::args_os()));
}
