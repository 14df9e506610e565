fn main() {
    std::process::exit(hdmed::cli::run());
}
