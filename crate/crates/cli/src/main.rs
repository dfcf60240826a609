fn main() {
    std::process::exit(vtvl_cli::run(std::env::args_os()));
}
