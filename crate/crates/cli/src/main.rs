fn main() {
    std::process::exit(drdid_cli::run(std::env::args_os()));
}
