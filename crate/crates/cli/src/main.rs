fn main() {
    std::process::exit(sigma2_cli::parse_and_dispatch(std::env::args()));
}
