fn main() {
    std::process::exit(tagdrift::cli::run(std::env::args()));
}
