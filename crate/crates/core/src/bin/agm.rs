fn main() {
    std::process::exit(agm::cli::run(std::env::args_os()));
}
