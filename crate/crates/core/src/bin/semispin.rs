fn main() {
    std::process::exit(semispin::cli::run(std::env::args_os()));
}
