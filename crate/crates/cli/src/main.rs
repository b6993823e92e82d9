fn main() {
    std::process::exit(loglin_cli::run(std::env::args_os()));
}
