fn main() {
    std::process::exit(lungdet::cli::main());
}
