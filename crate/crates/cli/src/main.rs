fn main() {
    std::process::exit(semloft_cli::cli::run(std::env::args_os()));
}
