#![no_main]

use libfuzzer_sys::fuzz_target;
use shapeflow_core::mesh::read_stl;

fuzz_target!(|data: &[u8]| {
    let _ = read_stl(data);
});
