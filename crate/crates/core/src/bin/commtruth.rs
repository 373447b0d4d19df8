fn main() {
    std::process::exit(commtruth::cli::main_with_args(std::env::args_os()));
}
