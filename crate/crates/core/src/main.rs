fn main() {
    std::process::exit(kappabench::cli::main());
}
