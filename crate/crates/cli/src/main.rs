fn main() {
    std::process::exit(solaudit::run(std::env::args_os()));
}
