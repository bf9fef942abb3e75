fn main() {
    std::process::exit(photocell::cli::run(std::env::args_os()));
}
