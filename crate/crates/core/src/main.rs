fn main() -> std::process::ExitCode {
    gausstin::cli::main()
}
