fn main() {
    std::process::exit(qtraj::cli::dispatch(std::env::args_os()));
}
