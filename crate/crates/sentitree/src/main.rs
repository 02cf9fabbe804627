fn main() {
    std::process::exit(sentitree::cli::main());
}
