fn main() {
    std::process::exit(opwalk_harness::cli::main_with(std::env::args_os()));
}
