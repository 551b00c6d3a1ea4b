fn main() {
    std::process::exit(levy_mmm::cli_io::main_with_args(std::env::args_os()));
}
