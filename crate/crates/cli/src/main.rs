fn main() {
    std::process::exit(forcelfd_cli::run(std::env::args_os()));
}
