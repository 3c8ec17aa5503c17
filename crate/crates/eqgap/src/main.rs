fn main() -> std::process::ExitCode {
    eqgap::cli::run()
}
