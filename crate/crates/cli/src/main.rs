fn main() {
    std::process::exit(boss_cli::main_with_args(std::env::args_os()));
}
