fn main() {
    std::process::exit(kgrec::cli::main());
}
