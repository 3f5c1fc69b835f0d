fn main() {
    std::process::exit(simda_cli::run(std::env::args_os()));
}
