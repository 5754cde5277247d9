fn main() {
    std::process::exit(textmatch::cli::run());
}
