#![no_main]

use libfuzzer_sys::fuzz_target;
use optbt::models::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = Checkpoint::read(data) {
        // a validated checkpoint always yields usable parameters
        let params = ckpt.params().unwrap();
        params.validate().unwrap();
    }
});
