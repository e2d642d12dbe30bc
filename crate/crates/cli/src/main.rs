fn main() {
    std::process::exit(kdvnet_cli::run(std::env::args_os()));
}
