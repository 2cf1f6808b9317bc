fn main() {
    std::process::exit(ulm_core::cli::main_impl());
}
