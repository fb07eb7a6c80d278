#![no_main]

use libfuzzer_sys::fuzz_target;
use shapeflow_nn::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = Checkpoint::decode(data) {
        // Compared as bytes so NaN weights still count as equal.
        let bytes = ck.encode().expect("decoded checkpoints re-encode");
        let again = Checkpoint::decode(&bytes).expect("re-encoded checkpoint decodes");
        assert_eq!(again.encode().expect("re-encode"), bytes);
    }
});
