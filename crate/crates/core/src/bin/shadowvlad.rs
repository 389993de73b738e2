fn main() {
    std::process::exit(shadowvlad::cli::run(std::env::args_os()));
}
