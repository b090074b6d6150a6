fn main() {
    std::process::exit(derain_cyclegan::cli::run(std::env::args_os()));
}
