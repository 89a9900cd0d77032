fn main() {
    std::process::exit(dcmstep_cli::app::run(std::env::args_os()));
}
