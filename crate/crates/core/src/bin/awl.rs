fn main() {
    std::process::exit(awl::cli::main_with_args(std::env::args_os()));
}
