fn main() {
    std::process::exit(unmix_core::cli::main_with_args(std::env::args_os()));
}
