fn main() {
    std::process::exit(gcsvr::cli::run(std::env::args_os()));
}
