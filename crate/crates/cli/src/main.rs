fn main() {
    eprintln!("abelia: command-line surface not wired up yet");
    std::process::exit(2);
}
