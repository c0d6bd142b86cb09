fn main() {
    std::process::exit(warpkit::cli::run(std::env::args_os()));
}
