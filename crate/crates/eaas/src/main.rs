fn main() {
    std::process::exit(embmark_eaas::cli::run_from(std::env::args_os()));
}
