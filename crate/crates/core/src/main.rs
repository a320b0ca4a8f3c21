fn main() {
    std::process::exit(featurelens::cli::run(std::env::args_os()));
}
