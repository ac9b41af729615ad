fn main() {
    std::process::exit(tacsim::cli::run(std::env::args_os()));
}
