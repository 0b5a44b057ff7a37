fn main() {
    std::process::exit(fracpile_cli::run(std::env::args_os()));
}
