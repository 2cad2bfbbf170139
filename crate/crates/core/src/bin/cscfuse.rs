fn main() {
    std::process::exit(cscfuse::cli::run(std::env::args_os()));
}
