#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;

/// Ten question/answer/image triples with pairwise distinct questions.
pub const TEN_PAIRS: &str = "\
what is on the desk ?
lamp
image1
what is under the table ?
chair
image2
what color is the sofa ?
red
image3
how many cups are on the shelf ?
3
image1
what is left of the bed ?
cabinet
image4
what is behind the door ?
towel
image2
what is in front of the window ?
curtain
image5
what color is the wall ?
white
image3
what is on the floor ?
carpet, box
image4
which object is near the sink ?
faucet
image5
";

pub const FEATURES: &str = "\
image1,0.5,1.0,-0.25,0.0
image2,1.5,0.0,0.75,-1.0
image3,0.0,0.5,0.5,0.5
image4,-1.0,2.0,0.0,0.25
image5,0.25,-0.5,1.0,1.0
";

pub const TOY_TAXONOMY: &str = "animal\t-\ndog\tanimal\ndalmatian\tdog\nhorse\tanimal\n";
pub const TOY_LEXICON: &str = "dog\tdog\nhorse\thorse\ndalmatian\tdalmatian\nanimal\tanimal\n";

/// Random tree of `n` concepts `c0..c{n-1}`, `c0` the root, listed in
/// shuffled order so parents may follow children.
pub fn random_taxonomy<R: Rng>(n: usize, rng: &mut R) -> String {
    let mut lines: Vec<String> = (0..n)
        .map(|i| {
            if i == 0 {
                "c0\t-".to_string()
            } else {
                format!("c{i}\tc{}", rng.gen_range(0..i))
            }
        })
        .collect();
    for i in (1..lines.len()).rev() {
        lines.swap(i, rng.gen_range(0..=i));
    }
    lines.join("\n") + "\n"
}

pub fn write(dir: &Path, name: &str, contents: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, contents).unwrap();
    path
}

pub fn path_str(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}
