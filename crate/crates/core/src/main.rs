fn main() {
    std::process::exit(coordlab::cli::run_command(std::env::args_os()));
}
