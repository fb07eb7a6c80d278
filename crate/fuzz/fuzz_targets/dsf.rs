#![no_main]

use libfuzzer_sys::fuzz_target;
use shapeflow_core::dsf;

fuzz_target!(|data: &[u8]| {
    if let Ok(field) = dsf::decode(data) {
        // Anything accepted must survive a round trip.
        let bytes = match &field {
            dsf::AnyField::Scalar(f) => dsf::encode_scalar(f),
            dsf::AnyField::Vector(f) => dsf::encode_vector(f),
        };
        assert!(dsf::decode(&bytes).is_ok());
    }
});
