fn main() {
    std::process::exit(hypoest::cli::run(std::env::args_os()));
}
