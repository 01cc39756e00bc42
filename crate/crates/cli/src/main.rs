fn main() {
    if let Err(err) = neurint_cli::run(std::env::args_os()) {
        match err.downcast_ref::<clap::Error>() {
            Some(e) => {
                let _ = e.print();
            }
            None => eprintln!("error: {err:#}"),
        }
        std::process::exit(neurint_cli::exit_code(&err));
    }
}
