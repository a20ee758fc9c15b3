fn main() {
    std::process::exit(msclip::cli::run(std::env::args_os()).into());
}
