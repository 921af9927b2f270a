fn main() {
    std::process::exit(wavegauge::cli::main_entry());
}
