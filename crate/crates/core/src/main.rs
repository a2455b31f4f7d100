fn main() {
    std::process::exit(gcnn_stab::cli::cli_main(std::env::args().collect()));
}
