fn main() {
    std::process::exit(img2joint::cli::run(std::env::args_os()));
}
