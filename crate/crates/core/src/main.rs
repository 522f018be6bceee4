fn main() {
    std::process::exit(aft_core::cli::run(std::env::args_os()));
}
