fn main() {
    std::process::exit(mbpg::harness::run_cli(std::env::args_os()));
}
