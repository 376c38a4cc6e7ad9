fn main() {
    std::process::exit(dda_cli::run(std::env::args_os()));
}
