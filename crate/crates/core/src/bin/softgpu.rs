fn main() {
    std::process::exit(softgpu::cli::dispatch(std::env::args_os()));
}
