fn main() {
    std::process::exit(polarfit::cli::run(std::env::args().skip(1)));
}
