fn main() {
    std::process::exit(dta_nma::cli::run_cli(std::env::args()));
}
