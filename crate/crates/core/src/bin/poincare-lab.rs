fn main() {
    std::process::exit(poincare_lab::cli::run_command(std::env::args_os()));
}
