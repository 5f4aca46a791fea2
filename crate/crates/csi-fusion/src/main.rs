fn main() {
    std::process::exit(csi_fusion::cli::dispatch(std::env::args_os()));
}
