fn main() {
    std::process::exit(plaincnn_cli::run(std::env::args_os()));
}
