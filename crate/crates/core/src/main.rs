fn main() {
    std::process::exit(musicskills::cli::run(std::env::args_os()));
}
