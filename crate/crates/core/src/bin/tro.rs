fn main() {
    env_logger::Builder::new().filter_level(log::LevelFilter::Warn).init();
    std::process::exit(tro_core::cli::run(std::env::args_os()));
}
