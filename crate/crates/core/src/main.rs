fn main() {
    std::process::exit(aicom::shell::cli::run(std::env::args_os()));
}
