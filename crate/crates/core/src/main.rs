fn main() {
    std::process::exit(tiltdid::cli::run());
}
