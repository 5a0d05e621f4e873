fn main() {
    std::process::exit(dtr_core::cli::main_with_args(std::env::args_os()));
}
