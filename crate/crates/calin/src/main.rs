fn main() {
    std::process::exit(calin::cli::run());
}
