fn main() {
    std::process::exit(pnf::cli::main_exit())
}
