fn main() {
    std::process::exit(mwlattice_cli::main_with_args(std::env::args_os()));
}
