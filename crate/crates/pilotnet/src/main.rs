fn main() {
    std::process::exit(pilotnet::cli::run());
}
