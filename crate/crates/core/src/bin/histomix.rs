fn main() {
    std::process::exit(histomix::cli::main_with_args(std::env::args_os()));
}
