fn main() {
    std::process::exit(kalman_mpc::main_with_args(std::env::args_os()));
}
