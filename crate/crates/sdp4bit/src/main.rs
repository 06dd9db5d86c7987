fn main() {
    std::process::exit(sdp4bit::cli::run(std::env::args_os()));
}
