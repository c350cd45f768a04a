fn main() {
    std::process::exit(flowgate::cli::run_command(std::env::args_os()));
}
