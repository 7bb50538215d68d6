fn main() {
    eprintln!("algcd: not wired up yet");
    std::process::exit(2);
}
