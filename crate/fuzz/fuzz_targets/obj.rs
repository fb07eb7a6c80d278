#![no_main]

use libfuzzer_sys::fuzz_target;
use shapeflow_core::mesh::read_obj;

fuzz_target!(|data: &[u8]| {
    if let Ok(mesh) = read_obj(data) {
        let _ = mesh.validate();
        let _ = mesh.is_watertight();
    }
});
