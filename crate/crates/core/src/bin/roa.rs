fn main() {
    std::process::exit(roa_attack::cli::run(std::env::args_os()));
}
