fn main() {
    std::process::exit(tvinna::cli::run());
}
