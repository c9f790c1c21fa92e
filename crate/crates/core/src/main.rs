fn main() {
    std::process::exit(psf4d::cli::run(std::env::args_os()));
}
