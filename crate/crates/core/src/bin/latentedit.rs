fn main() {
    std::process::exit(latentedit::cli::run_cli(std::env::args_os()));
}
