fn main() {
    std::process::exit(vbsurv::cli::run(std::env::args_os()));
}
