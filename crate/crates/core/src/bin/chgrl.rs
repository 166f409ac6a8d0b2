fn main() {
    std::process::exit(chgrl::cli::run(std::env::args_os()));
}
