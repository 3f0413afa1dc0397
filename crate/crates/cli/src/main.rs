fn main() {
    std::process::exit(crossworld_cli::run(std::env::args().skip(1)));
}
