fn main() {
    std::process::exit(lesionbench::run_cli(std::env::args_os()));
}
