fn main() {
    env_logger::init();
    std::process::exit(dm_lab::cli::main_with_args(std::env::args_os()));
}
