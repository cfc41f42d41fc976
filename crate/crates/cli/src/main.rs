fn main() {
    std::process::exit(logspline_cli::run(std::env::args_os()));
}
