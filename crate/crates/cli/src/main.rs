fn main() {
    std::process::exit(drpets_cli::run_from(std::env::args_os()));
}
