fn main() {
    std::process::exit(watchdog_cli::main_with_args(std::env::args_os()));
}
