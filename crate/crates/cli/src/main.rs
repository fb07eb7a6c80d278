fn main() {
    std::process::exit(shapeflow_cli::run(std::env::args_os()));
}
