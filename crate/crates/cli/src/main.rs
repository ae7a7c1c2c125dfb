fn main() {
    std::process::exit(matdist::run(std::env::args_os()));
}
