fn main() {
    std::process::exit(rejex::cli::run_command(std::env::args_os()));
}
