fn main() {
    std::process::exit(grouped_tvc::cli::run(std::env::args_os()));
}
