#![no_main]

use libfuzzer_sys::fuzz_target;
use shapeflow_core::geometry::read_designs_csv;

fuzz_target!(|data: &[u8]| {
    let _ = read_designs_csv(data);
});
