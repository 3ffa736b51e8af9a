fn main() {
    std::process::exit(llb::cli::dispatch(std::env::args_os()));
}
