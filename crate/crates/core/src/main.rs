fn main() {
    std::process::exit(poiapp::cli::run(std::env::args_os()));
}
