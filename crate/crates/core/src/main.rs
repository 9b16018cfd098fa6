fn main() {
    let code = phylogeo::cli::main_with_args(std::env::args());
    std::process::exit(code);
}
