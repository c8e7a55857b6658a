fn main() -> std::process::ExitCode {
    alwaysvalid::cli::main_with(std::env::args_os())
}
