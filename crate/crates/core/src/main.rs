fn main() {
    std::process::exit(splinet::cli::main_with_args(std::env::args_os()));
}
