fn main() {
    let config = meshswap::verify::golden_config();
    print!("{}", meshswap::verify::run_summary(&config).unwrap());
}
