fn main() {
    std::process::exit(smoothdiv::cli::run(std::env::args_os()));
}
