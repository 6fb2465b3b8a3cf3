fn main() {
    std::process::exit(fractal_homog::cli::run(std::env::args_os()))
}
