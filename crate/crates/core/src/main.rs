fn main() {
    std::process::exit(rfid_activity::cli::run(std::env::args_os()));
}
