fn main() {
    std::process::exit(punctlab::cli::main_with(std::env::args_os()));
}
