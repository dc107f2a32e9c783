fn main() {
    std::process::exit(invarlab_cli::run(std::env::args_os()));
}
