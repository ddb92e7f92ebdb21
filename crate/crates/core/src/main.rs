fn main() {
    std::process::exit(carspeed::cli::run(std::env::args_os()));
}
