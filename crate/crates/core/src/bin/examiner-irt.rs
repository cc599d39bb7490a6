fn main() {
    std::process::exit(examiner_irt::cli::run(std::env::args_os()));
}
