fn main() {
    std::process::exit(vqa_core::cli::main_with_args(std::env::args_os()));
}
