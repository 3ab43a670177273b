fn main() -> std::process::ExitCode {
    spreadcast::cli::main_from(std::env::args_os())
}
