fn main() {
    std::process::exit(kancl::cli::main());
}
