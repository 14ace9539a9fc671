fn main() {
    std::process::exit(stepimpute::cli::run(std::env::args_os()));
}
