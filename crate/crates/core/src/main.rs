fn main() {
    std::process::exit(dvae::cli::run(std::env::args_os()));
}
