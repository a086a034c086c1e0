//! Synthetic source datasets for trying the harness without the licensed
//! image collections.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use crate::benchmark::{BackgroundEntry, ObjectEntry};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DemoLayout {
    /// Candidates per custom category.
    pub per_category: usize,
    pub tficon: usize,
    /// Indexes (within the tficon set) flagged as already showing the object.
    pub tficon_present: Vec<usize>,
    pub backgrounds: usize,
    pub object_side: u32,
    pub canvas: (u32, u32),
}

impl Default for DemoLayout {
    fn default() -> Self {
        Self {
            per_category: 25,
            tficon: 10,
            tficon_present: vec![1, 4, 7],
            backgrounds: 4,
            object_side: 32,
            canvas: (64, 64),
        }
    }
}

const COLORS: [(&str, [u8; 3]); 4] = [
    ("red", [200, 30, 30]),
    ("blue", [30, 60, 200]),
    ("green", [30, 160, 60]),
    ("black", [25, 25, 25]),
];

fn object(side: u32, color: [u8; 3], variant: usize) -> RgbImage {
    let c = side as f64 / 2.0;
    let r = 0.35 + 0.1 * (variant % 3) as f64;
    RgbImage::from_fn(side, side, |x, y| {
        let d = ((x as f64 + 0.5 - c).powi(2) + (y as f64 + 0.5 - c).powi(2)).sqrt() / c;
        if d < r * 2.0 {
            Rgb(color)
        } else {
            Rgb([255, 255, 255])
        }
    })
}

fn background((w, h): (u32, u32), variant: usize) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| {
        let t = y as f64 / h as f64;
        let v = variant as f64 * 23.0;
        Rgb([
            (120.0 + 80.0 * t + v) as u8 % 255,
            (150.0 - 40.0 * t) as u8,
            ((x * 2) as f64 + 60.0 * (1.0 - t)) as u8,
        ])
    })
}

fn write_jsonl<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let text: String = rows
        .iter()
        .map(|r| serde_json::to_string(r).expect("row serializes") + "\n")
        .collect();
    std::fs::write(path, text)?;
    Ok(())
}

/// Writes images, indexes and `sources.toml` under `root`; returns the path
/// of the sources file.
pub fn write_demo_sources(root: &Path, layout: &DemoLayout, seed: u64) -> Result<PathBuf> {
    std::fs::create_dir_all(root.join("backgrounds"))?;
    let places = ["city street", "driveway", "living room", "beach", "forest path", "parking lot"];
    let mut pool = Vec::new();
    for i in 0..layout.backgrounds {
        let rel = format!("backgrounds/bg_{i:02}.png");
        background(layout.canvas, i).save(root.join(&rel))?;
        pool.push(BackgroundEntry {
            image: rel,
            place: places[i % places.len()].to_string(),
        });
    }
    write_jsonl(&root.join("backgrounds/index.jsonl"), &pool)?;

    let mut toml = format!("seed = {seed}\nper_category = 20\n");
    for (category, product) in [("bikes", "bicycle"), ("cars", "car"), ("products", "product")] {
        std::fs::create_dir_all(root.join(category))?;
        let mut rows = Vec::new();
        for i in 0..layout.per_category {
            let rel = format!("{category}/obj_{i:03}.png");
            let (name, rgb) = COLORS[i % COLORS.len()];
            object(layout.object_side, rgb, i).save(root.join(&rel))?;
            rows.push(ObjectEntry {
                id: format!("{i:03}"),
                object: rel,
                product_type: if category == "products" {
                    format!("{product} {}", i)
                } else {
                    product.to_string()
                },
                color: name.to_string(),
                background: None,
                place: None,
                placement: None,
                object_present: false,
            });
        }
        write_jsonl(&root.join(category).join("index.jsonl"), &rows)?;
        toml.push_str(&format!(
            "\n[[source]]\ncategory = \"{category}\"\nindex = \"{category}/index.jsonl\"\nbackgrounds = \"backgrounds/index.jsonl\"\n"
        ));
    }

    std::fs::create_dir_all(root.join("tficon"))?;
    let mut rows = Vec::new();
    for i in 0..layout.tficon {
        let obj = format!("tficon/fg_{i:02}.png");
        let bg = format!("tficon/bg_{i:02}.png");
        let (name, rgb) = COLORS[(i + 1) % COLORS.len()];
        object(layout.object_side, rgb, i).save(root.join(&obj))?;
        background(layout.canvas, i + 7).save(root.join(&bg))?;
        rows.push(ObjectEntry {
            id: format!("{i:02}"),
            object: obj,
            product_type: "lamp".into(),
            color: name.into(),
            background: Some(bg),
            place: Some(places[i % places.len()].into()),
            placement: None,
            object_present: layout.tficon_present.contains(&i),
        });
    }
    write_jsonl(&root.join("tficon/index.jsonl"), &rows)?;
    toml.push_str("\n[[source]]\ncategory = \"tficon\"\nindex = \"tficon/index.jsonl\"\n");
    let path = root.join("sources.toml");
    std::fs::write(&path, toml)?;
    Ok(path)
}
