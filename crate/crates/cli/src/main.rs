fn main() {
    std::process::exit(conparse::run(std::env::args_os()));
}
