fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let root = std::env::var_os("BBM_OUT_DIR").map(std::path::PathBuf::from);
    std::process::exit(bbm_cli::main_with(&args, root));
}
