#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| consult_core_fuzz::extraction_output(data));
