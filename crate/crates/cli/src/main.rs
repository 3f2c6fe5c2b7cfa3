fn main() {
    std::process::exit(zcbm_cli::run(std::env::args_os()));
}
