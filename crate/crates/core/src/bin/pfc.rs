fn main() {
    std::process::exit(pfc_core::cli::run_cli(std::env::args_os()));
}
