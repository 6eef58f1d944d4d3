use std::env;
use std::path::PathBuf;

fn main() {
    let crate_dir = PathBuf::from(env::var("CARGO_MANIFEST_DIR").expect("manifest dir"));
    let header = crate_dir.join("include").join("flowlab.h");

    let config = cbindgen::Config {
        language: cbindgen::Language::C,
        include_guard: Some("FLOWLAB_H".to_string()),
        cpp_compat: true,
        documentation: true,
        header: Some(
            "/* C interface to the flowlab fund-flow impact analytics library. */".to_string(),
        ),
        ..Default::default()
    };

    cbindgen::Builder::new()
        .with_crate(&crate_dir)
        .with_config(config)
        .generate()
        .expect("cbindgen header generation failed")
        .write_to_file(header);

    println!("cargo:rerun-if-changed=src/lib.rs");
}
