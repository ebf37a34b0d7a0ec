fn main() {
    std::process::exit(semiflow::cli::main_with(std::env::args_os()));
}
