fn main() {
    let env = std::env::vars().collect();
    std::process::exit(smoj::cli::main_with(std::env::args_os(), env));
}
