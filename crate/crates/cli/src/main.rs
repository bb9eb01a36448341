fn main() {
    std::process::exit(or2_cli::run(std::env::args()));
}
