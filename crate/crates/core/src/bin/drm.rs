fn main() {
    std::process::exit(drm::cli::dispatch(std::env::args_os()));
}
