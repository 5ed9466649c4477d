fn main() {
    std::process::exit(clnet::cli::run(std::env::args_os()));
}
