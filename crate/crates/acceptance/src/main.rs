//! The `smoothdiv` command line, built inside this package so the suite can run it.

fn main() {
    std::process::exit(smoothdiv::cli::run(std::env::args_os()));
}
