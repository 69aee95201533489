fn main() {
    cartal::cli::init_logging();
    std::process::exit(cartal::cli::run_from_args(std::env::args_os()));
}
