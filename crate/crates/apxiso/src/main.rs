fn main() {
    std::process::exit(apxiso::cli::run());
}
