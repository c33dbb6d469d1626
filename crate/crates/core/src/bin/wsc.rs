fn main() -> std::process::ExitCode {
    wsc_core::cli::run()
}
