fn main() {
    std::process::exit(evoscen::run_cli());
}
