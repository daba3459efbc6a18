fn main() {
    std::process::exit(nvtok::cli::main_entry());
}
