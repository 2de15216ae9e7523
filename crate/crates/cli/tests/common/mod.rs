#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use image::{Rgb, RgbImage, Rgba, RgbaImage};

pub const CLASSES: [&str; 6] = ["binder", "cup", "dumbbell", "glue", "holder", "plate"];
pub const VIEWS_PER_CLASS: u32 = 4;

fn inside(shape: usize, x: u32, y: u32, w: u32, h: u32) -> bool {
    let (fx, fy) = ((x as f64 + 0.5) / w as f64, (y as f64 + 0.5) / h as f64);
    match shape {
        0 => (fx - 0.5).powi(2) / 0.2 + (fy - 0.5).powi(2) / 0.2 < 1.0,
        1 => (0.06..0.94).contains(&fx) && (0.08..0.92).contains(&fy) && !(fx > 0.6 && fy < 0.35),
        _ => fy > 0.06 && fy < 0.94 && (fx - 0.5).abs() < 0.46 * fy,
    }
}

fn shade(class: usize, x: u32, y: u32) -> [u8; 3] {
    let base = [[200, 90, 40], [60, 160, 210], [120, 200, 80], [230, 210, 60], [170, 80, 190], [220, 220, 220]][class];
    let t = ((x * 7 + y * 3) % 32) as u8;
    base.map(|c: u8| c.saturating_sub(t))
}

/// Procedural catalog: six classes of four views on black, the last class
/// stored as RGBA over noise so only alpha marks the foreground.
pub fn write_catalog(root: &Path) -> PathBuf {
    let dir = root.join("catalog");
    for (c, name) in CLASSES.iter().enumerate() {
        let class_dir = dir.join(name);
        fs::create_dir_all(&class_dir).unwrap();
        for v in 0..VIEWS_PER_CLASS {
            let w = 72 + 12 * ((c as u32 * 3 + v) % 5);
            let h = 64 + 10 * ((c as u32 + 2 * v) % 5);
            let shape = (c + v as usize) % 3;
            let path = class_dir.join(format!("{v}.png"));
            if c == CLASSES.len() - 1 {
                RgbaImage::from_fn(w, h, |x, y| {
                    let [r, g, b] = shade(c, x, y);
                    if inside(shape, x, y, w, h) {
                        Rgba([r, g, b, 255])
                    } else {
                        Rgba([(x * 13 % 256) as u8, (y * 29 % 256) as u8, 90, 0])
                    }
                })
                .save(&path)
                .unwrap();
            } else {
                RgbImage::from_fn(w, h, |x, y| {
                    if inside(shape, x, y, w, h) {
                        Rgb(shade(c, x, y))
                    } else {
                        Rgb([0, 0, 0])
                    }
                })
                .save(&path)
                .unwrap();
            }
        }
    }
    dir
}

pub fn occlusynth() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_occlusynth"));
    cmd.env_remove("OCCLUSYNTH_JOBS");
    cmd
}

pub fn run(args: &[&str]) -> Output {
    occlusynth().args(args).output().expect("binary runs")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Every file under `root` as (relative path, bytes), sorted by path.
pub fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, acc: &mut Vec<(String, Vec<u8>)>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, acc);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                acc.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    let mut acc = Vec::new();
    walk(root, root, &mut acc);
    acc.sort();
    acc
}
