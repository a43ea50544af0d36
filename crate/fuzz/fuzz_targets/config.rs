#![no_main]
use blisslab_cli::config::load;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = load(text, "fuzz") {
        let _ = cfg.resolved();
        let _ = cfg.profiles();
    }
});
