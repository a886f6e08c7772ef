fn main() {
    std::process::exit(sdfgan::commands::main_with_args(std::env::args_os()));
}
