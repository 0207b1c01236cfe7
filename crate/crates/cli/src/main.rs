fn main() {
    std::process::exit(sketchforge_cli::cli::run(std::env::args_os()));
}
