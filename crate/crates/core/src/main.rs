fn main() {
    std::process::exit(ncae::cli::run(std::env::args_os()));
}
