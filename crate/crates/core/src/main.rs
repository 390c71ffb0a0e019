fn main() {
    std::process::exit(nonlocal_sir::cli_io::run(std::env::args_os()));
}
