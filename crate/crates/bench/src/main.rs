fn main() {
    std::process::exit(dmlfed_bench::cli::main());
}
