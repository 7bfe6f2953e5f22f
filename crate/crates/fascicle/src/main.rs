fn main() {
    std::process::exit(fascicle::cli::run(std::env::args_os()));
}
