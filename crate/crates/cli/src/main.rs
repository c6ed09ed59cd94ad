fn main() {
    std::process::exit(finch_cli::main_with(std::env::args_os()));
}
