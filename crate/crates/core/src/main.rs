fn main() {
    std::process::exit(rtglmm::cli::run(std::env::args_os()));
}
