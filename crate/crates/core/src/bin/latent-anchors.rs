fn main() {
    std::process::exit(latent_anchors::cli::run(std::env::args_os()));
}
