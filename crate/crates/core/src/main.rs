fn main() {
    std::process::exit(natfact::cli::run(std::env::args_os()));
}
