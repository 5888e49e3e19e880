fn main() {
    std::process::exit(medexplore::cli::main_with_args(std::env::args_os()));
}
