fn main() {
    std::process::exit(mespla::harness::cli::run(std::env::args_os()));
}
