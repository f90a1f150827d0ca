fn main() {
    std::process::exit(secagg::cli::run(std::env::args_os()));
}
