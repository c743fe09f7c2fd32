use std::path::PathBuf;

fn main() {
    let dir = PathBuf::from(std::env::var("CARGO_MANIFEST_DIR").expect("set by cargo"));
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
    let config = cbindgen::Config::from_file(dir.join("cbindgen.toml")).expect("cbindgen.toml parses");
    let header = match cbindgen::generate_with_config(&dir, config) {
        Ok(h) => h,
        Err(e) => {
            println!("cargo:warning=header not regenerated: {e}");
            return;
        }
    };
    let mut bytes = Vec::new();
    header.write(&mut bytes);
    let target = dir.join("include").join("mupfl.h");
    if std::fs::read(&target).ok().as_deref() != Some(bytes.as_slice()) {
        std::fs::create_dir_all(target.parent().expect("has parent")).expect("create include dir");
        std::fs::write(&target, bytes).expect("write header");
    }
}
