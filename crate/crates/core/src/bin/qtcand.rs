fn main() {
    std::process::exit(qtcand::cli::run(std::env::args_os()));
}
