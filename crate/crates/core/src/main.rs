fn main() {
    std::process::exit(snn_decoder::cli::run(std::env::args_os()));
}
