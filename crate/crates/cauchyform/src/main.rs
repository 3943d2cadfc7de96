fn main() {
    std::process::exit(cauchyform::cli::run(std::env::args_os()));
}
