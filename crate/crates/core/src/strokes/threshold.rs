use super::image::{binarize, count_components, Connectivity, GrayImage};
use crate::error::{Error, Result};

/// Scanning stops when the level reaches this value.
pub const MAX_THRESHOLD: u16 = 250;

/// Raise the binarization level one unit at a time from zero and return the
/// last level at which the 4- and 8-connected component counts still equal
/// their level-0 values and at least half of the level-0 ink survives.
pub fn select_threshold(img: &GrayImage) -> Result<u8> {
    let base = binarize(img, 0);
    let base_ink = base.ink_count();
    if base_ink == 0 {
        return Err(Error::Degenerate("image has no ink".into()));
    }
    let base4 = count_components(&base, Connectivity::Four);
    let base8 = count_components(&base, Connectivity::Eight);

    let mut present = [false; 256];
    for &p in img.pixels() {
        present[p as usize] = true;
    }

    for level in 1..=MAX_THRESHOLD {
        if level == MAX_THRESHOLD {
            return Ok((level - 1) as u8);
        }
        // Raising the level to v only removes pixels of intensity exactly v.
        if !present[level as usize] {
            continue;
        }
        let bin = binarize(img, level as u8);
        let ink = bin.ink_count();
        if 2 * ink < base_ink
            || count_components(&bin, Connectivity::Four) != base4
            || count_components(&bin, Connectivity::Eight) != base8
        {
            return Ok((level - 1) as u8);
        }
    }
    unreachable!("loop returns at MAX_THRESHOLD")
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Straight scan over every level with no skipping.
    fn reference_scan(img: &GrayImage) -> u8 {
        let counts = |level: u8| {
            let b = binarize(img, level);
            (
                b.ink_count(),
                count_components(&b, Connectivity::Four),
                count_components(&b, Connectivity::Eight),
            )
        };
        let (n0, c4, c8) = counts(0);
        let mut selected = 0u8;
        for level in 1..=255u16 {
            let (n, a, b) = counts(level as u8);
            let stop = a != c4 || b != c8 || (n as f64) < 0.5 * n0 as f64 || level >= 250;
            if stop {
                break;
            }
            selected = level as u8;
        }
        selected
    }

    fn image(rows: &[&[u8]]) -> GrayImage {
        let h = rows.len();
        let w = rows[0].len();
        GrayImage::new(w, h, rows.concat()).unwrap()
    }

    #[test]
    fn saturated_ink_hits_level_cap() {
        let img = image(&[&[0, 255, 255], &[0, 255, 0], &[0, 0, 0]]);
        assert_eq!(select_threshold(&img).unwrap(), 249);
        assert_eq!(reference_scan(&img), 249);
    }

    #[test]
    fn losing_half_the_ink_stops_the_scan() {
        // Three pixels at 100 and two at 200: at level 100 only 2 of 5 remain.
        let img = image(&[&[100, 100, 100, 200, 200]]);
        assert_eq!(reference_scan(&img), 99);
        assert_eq!(select_threshold(&img).unwrap(), 99);
        // Two of three survive level 100; everything vanishes at level 200.
        let img = image(&[&[100, 200, 200]]);
        assert_eq!(reference_scan(&img), 199);
        assert_eq!(select_threshold(&img).unwrap(), 199);
    }

    #[test]
    fn split_component_stops_the_scan() {
        // The bridge pixel at 37 disconnects the bar when the level reaches 37.
        let img = image(&[&[200, 200, 200, 37, 200, 200, 200]]);
        assert_eq!(reference_scan(&img), 36);
        assert_eq!(select_threshold(&img).unwrap(), 36);
    }

    #[test]
    fn blank_image_is_degenerate() {
        let img = GrayImage::new(28, 28, vec![0; 784]).unwrap();
        assert!(matches!(select_threshold(&img), Err(Error::Degenerate(_))));
    }

    #[test]
    fn matches_reference_on_random_images() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let pixels: Vec<u8> = (0..64)
                .map(|_| {
                    if rng.random_bool(0.4) {
                        rng.random_range(1..=255)
                    } else {
                        0
                    }
                })
                .collect();
            let img = GrayImage::new(8, 8, pixels).unwrap();
            if img.pixels().iter().all(|&p| p == 0) {
                continue;
            }
            assert_eq!(select_threshold(&img).unwrap(), reference_scan(&img));
        }
    }
}
