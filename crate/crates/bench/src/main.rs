fn main() {
    std::process::exit(pipc_bench::cli::run(std::env::args_os()));
}
