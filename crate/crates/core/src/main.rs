fn main() {
    std::process::exit(moss::cli::run(std::env::args_os()));
}
