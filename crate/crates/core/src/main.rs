fn main() {
    std::process::exit(encoder_sim::cli::main_with_args(std::env::args_os()));
}
