fn main() {
    std::process::exit(saddlepoint::cli::main_with_args(std::env::args_os()));
}
