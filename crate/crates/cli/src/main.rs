fn main() {
    std::process::exit(cdis_cli::run(std::env::args_os()));
}
