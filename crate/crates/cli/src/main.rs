fn main() {
    std::process::exit(h2s2r_cli::run(std::env::args_os()));
}
