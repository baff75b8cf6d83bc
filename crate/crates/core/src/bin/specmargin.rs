fn main() {
    std::process::exit(specmargin::cli::run());
}
