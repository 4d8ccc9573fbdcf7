fn main() {
    std::process::exit(bargewatch_cli::run(std::env::args_os()));
}
