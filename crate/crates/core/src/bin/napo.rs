fn main() {
    std::process::exit(napo::harness::run(std::env::args_os()));
}
