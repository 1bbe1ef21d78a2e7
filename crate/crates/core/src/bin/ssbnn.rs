fn main() {
    std::process::exit(ssbnn::cli::main_with_args(std::env::args_os()));
}
