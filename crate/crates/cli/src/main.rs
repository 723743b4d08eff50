fn main() {
    std::process::exit(psdae_cli::main_with_args(std::env::args_os()));
}
