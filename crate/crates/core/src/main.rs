fn main() {
    std::process::exit(ipcc::cli::run(std::env::args_os()));
}
