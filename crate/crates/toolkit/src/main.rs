fn main() {
    std::process::exit(nmd_toolkit::cli::run(std::env::args().collect()));
}
