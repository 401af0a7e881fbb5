fn main() {
    std::process::exit(akd_core::cli::main_with_args(std::env::args_os()));
}
