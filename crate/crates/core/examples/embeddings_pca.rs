// SPDX-License-Identifier: Apache-2.0

//! CLS embeddings from the stub backbone, reduced to three PCA components.
//!
//! `cargo run --example embeddings_pca`

use billboard_gaze::features::{crop_for_embedding, embed, pca_fit, stub_embedder, EmbeddingSource};
use billboard_gaze::BBox;
use image::{Rgb, RgbImage};

fn main() -> billboard_gaze::Result<()> {
    let model = stub_embedder(1)?;
    let mut rows = Vec::new();
    for i in 0..12u32 {
        let img = RgbImage::from_fn(96, 64, |x, y| Rgb([(x * i) as u8, (y + 10 * i) as u8, 40]));
        let crop = crop_for_embedding(&img, &BBox::new(10.0, 8.0, 50.5 + i as f64, 40.0))?;
        rows.push(embed(&crop, &model, EmbeddingSource::Crop)?.as_f64());
    }
    println!("{} embeddings of width {}", rows.len(), rows[0].len());

    let pca = pca_fit(&rows, 3)?;
    println!("explained variance: {:?}", pca.explained_variance);
    for r in rows.iter().take(3) {
        println!("  {:?}", pca.project(r)?);
    }
    Ok(())
}
