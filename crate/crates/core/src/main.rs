fn main() {
    std::process::exit(seqcorr::cli::main());
}
