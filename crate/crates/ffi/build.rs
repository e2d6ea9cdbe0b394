use std::path::PathBuf;

fn main() {
    let dir = PathBuf::from(std::env::var("CARGO_MANIFEST_DIR").expect("set by cargo"));
    let src = dir.join("src/lib.rs");
    println!("cargo:rerun-if-changed={}", src.display());
    println!("cargo:rerun-if-changed=build.rs");

    let bindings = cbindgen::Builder::new()
        .with_src(&src)
        .with_language(cbindgen::Language::C)
        .with_include_guard("WISV_H")
        .with_autogen_warning("/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */")
        .with_cpp_compat(true)
        .with_documentation(true)
        .generate()
        .expect("generating C header");
    bindings.write_to_file(dir.join("include/wisv.h"));
}
