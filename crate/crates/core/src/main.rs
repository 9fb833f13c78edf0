fn main() {
    std::process::exit(rpo::lab::cli::cli_dispatch(std::env::args_os()));
}
