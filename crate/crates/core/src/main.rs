fn main() {
    std::process::exit(orbispec::cli::run(std::env::args_os()));
}
