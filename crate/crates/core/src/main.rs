fn main() {
    std::process::exit(racdnn::cli::run(std::env::args_os()));
}
