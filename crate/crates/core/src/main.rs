fn main() {
    std::process::exit(lrc::cli::run(std::env::args_os()));
}
