fn main() {
    std::process::exit(adexposure::bench::cli::run(std::env::args_os()));
}
