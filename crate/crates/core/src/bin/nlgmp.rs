fn main() {
    std::process::exit(nlgmp::cli::run(std::env::args_os()));
}
