fn main() {
    std::process::exit(qlab_cli::run(std::env::args_os()));
}
