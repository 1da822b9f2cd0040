fn main() {
    std::process::exit(friendly_core::cli::run(std::env::args_os()));
}
