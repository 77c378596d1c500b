fn main() {
    std::process::exit(milltwin::cli::main(std::env::args_os()));
}
