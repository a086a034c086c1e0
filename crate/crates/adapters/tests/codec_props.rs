use image::{Rgb, RgbImage};
use insertkit_adapters::toy::{ToyCodec, ToyUpscaler};
use insertkit_adapters::{LatentCodec, Upscaler};
use proptest::prelude::*;

fn block_image(bw: u32, bh: u32, colours: &[[u8; 3]]) -> RgbImage {
    RgbImage::from_fn(bw * 8, bh * 8, |x, y| {
        let i = ((y / 8) * bw + x / 8) as usize;
        Rgb(colours[i % colours.len()])
    })
}

proptest! {
    #[test]
    fn block_constant_images_round_trip(
        bw in 1u32..6,
        bh in 1u32..6,
        colours in prop::collection::vec(any::<[u8; 3]>(), 1..36),
    ) {
        let img = block_image(bw, bh, &colours);
        let z = ToyCodec.encode(&img).unwrap();
        prop_assert_eq!(z.shape(), (4, bh as usize, bw as usize));
        prop_assert!(z.as_slice().iter().all(|v| (-1.0..=1.0).contains(v)));
        prop_assert_eq!(ToyCodec.decode(&z).unwrap(), img);
    }

    #[test]
    fn upscale_preserves_every_source_pixel(
        w in 1u32..12,
        h in 1u32..12,
        f in prop::sample::select(vec![1u32, 2, 4, 8]),
        seed in any::<u8>(),
    ) {
        let img = RgbImage::from_fn(w, h, |x, y| Rgb([(x as u8).wrapping_mul(seed), y as u8, seed]));
        let up = ToyUpscaler.upscale(&img, f).unwrap();
        prop_assert_eq!(up.dimensions(), (w * f, h * f));
        for (x, y, p) in img.enumerate_pixels() {
            prop_assert_eq!(up.get_pixel(x * f, y * f), p);
            prop_assert_eq!(up.get_pixel(x * f + f - 1, y * f + f - 1), p);
        }
    }
}
