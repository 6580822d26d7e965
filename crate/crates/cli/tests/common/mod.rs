#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use convlens_core::imaging::{write_png, RgbImage};
use convlens_core::model::WeightContainer;
use rand::{rngs::StdRng, Rng, SeedableRng};

pub fn convlens(args: &[&str], threads: Option<usize>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_convlens"));
    cmd.args(args).env_remove("CONVLENS_THREADS");
    if let Some(n) = threads {
        cmd.env("CONVLENS_THREADS", n.to_string());
    }
    cmd.output().expect("convlens runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

pub fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

pub fn save_container(dir: &Path, name: &str, c: &WeightContainer) -> PathBuf {
    let p = dir.join(name);
    c.write(&p).unwrap();
    p
}

pub fn save_image(dir: &Path, name: &str, img: &RgbImage) -> PathBuf {
    let p = dir.join(name);
    write_png(img, &p).unwrap();
    p
}

pub fn noise_image(seed: u64, w: usize, h: usize) -> RgbImage {
    let mut rng = StdRng::seed_from_u64(seed);
    RgbImage::from_fn(w, h, |_, _| [rng.gen(), rng.gen(), rng.gen()])
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
