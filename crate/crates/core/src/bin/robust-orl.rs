fn main() {
    std::process::exit(robust_orl::cli::run(std::env::args_os()));
}
