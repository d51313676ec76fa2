fn main() {
    std::process::exit(ratelens::cli::run());
}
