fn main() -> std::process::ExitCode {
    hopwise::cli::main()
}
