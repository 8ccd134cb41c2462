//! Zhang-Suen thinning.

use super::image::BinaryImage;

/// Neighbors P2..P9, clockwise from north.
const RING: [(i64, i64); 8] = [
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
];

/// Iterate both Zhang-Suen sub-passes until a full pass deletes nothing.
pub fn thin(img: &BinaryImage) -> BinaryImage {
    let mut out = img.clone();
    let mut marked = Vec::new();
    loop {
        let mut deleted = false;
        for first_pass in [true, false] {
            marked.clear();
            for (col, row) in out.ink_pixels() {
                if deletable(&out, col as i64, row as i64, first_pass) {
                    marked.push((col, row));
                }
            }
            for &(col, row) in &marked {
                out.set(col, row, false);
            }
            deleted |= !marked.is_empty();
        }
        if !deleted {
            return out;
        }
    }
}

fn deletable(img: &BinaryImage, col: i64, row: i64, first_pass: bool) -> bool {
    let p: [bool; 8] = RING.map(|(dc, dr)| img.get_signed(col + dc, row + dr));
    let neighbors = p.iter().filter(|&&b| b).count();
    if !(2..=6).contains(&neighbors) {
        return false;
    }
    let transitions = (0..8).filter(|&i| !p[i] && p[(i + 1) % 8]).count();
    if transitions != 1 {
        return false;
    }
    let [p2, _, p4, _, p6, _, p8, _] = p;
    if first_pass {
        !(p2 && p4 && p6) && !(p4 && p6 && p8)
    } else {
        !(p2 && p4 && p8) && !(p2 && p6 && p8)
    }
}
