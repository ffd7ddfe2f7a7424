fn main() {
    std::process::exit(gradsamp::cli::run(std::env::args_os()));
}
