fn main() {
    std::process::exit(sinkdir::cli::main_with_args(std::env::args_os()));
}
