fn main() {
    std::process::exit(evpan_cli::run(std::env::args_os()));
}
