fn main() {
    std::process::exit(fcro::cli::run(std::env::args_os()));
}
