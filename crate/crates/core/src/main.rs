fn main() {
    std::process::exit(vpu::cli::run(std::env::args_os()));
}
