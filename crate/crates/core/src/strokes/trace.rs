//! Skeleton traversal into pen steps, and the inverse rendering.

use super::image::BinaryImage;
use super::sequence::PenStep;
use crate::error::{Error, Result};

/// Squared distance, then row, then column.
fn closer(a: (i64, (usize, usize)), b: (i64, (usize, usize))) -> bool {
    let key = |(d, (c, r)): (i64, (usize, usize))| (d, r, c);
    key(a) < key(b)
}

fn dist2(a: (usize, usize), b: (usize, usize)) -> i64 {
    let dc = a.0 as i64 - b.0 as i64;
    let dr = a.1 as i64 - b.1 as i64;
    dc * dc + dr * dr
}

/// Greedy tour over the skeleton starting from the top-left origin.
///
/// Each stroke starts at the unvisited pixel nearest to the pen and follows
/// the nearest unvisited 8-neighbor until none is left; then a pen-up step is
/// emitted and the pen jumps to the nearest remaining pixel. Ties go to the
/// earlier pixel in row-major order. The result ends with `(0, 0, 1, 1)`.
pub fn extract_strokes(skeleton: &BinaryImage) -> Result<Vec<PenStep>> {
    let mut remaining = skeleton.ink_pixels();
    if remaining.is_empty() {
        return Err(Error::Degenerate("skeleton has no ink".into()));
    }
    let mut visited = BinaryImage::empty(skeleton.width(), skeleton.height());
    let mut steps = Vec::with_capacity(remaining.len() + 8);
    let mut pen = (0usize, 0usize);
    let mut left = remaining.len();

    while left > 0 {
        // Jump to the globally nearest unvisited pixel.
        let mut best: Option<(i64, (usize, usize))> = None;
        for &p in &remaining {
            if visited.get(p.0, p.1) {
                continue;
            }
            let cand = (dist2(pen, p), p);
            if best.is_none_or(|b| closer(cand, b)) {
                best = Some(cand);
            }
        }
        let (_, start) = best.expect("unvisited pixel exists");
        if !steps.is_empty() {
            steps.push(PenStep::PEN_UP);
        }
        let mut here = start;
        loop {
            steps.push(PenStep::moveto(
                here.0 as i32 - pen.0 as i32,
                here.1 as i32 - pen.1 as i32,
            ));
            visited.set(here.0, here.1, true);
            left -= 1;
            pen = here;

            let mut next: Option<(i64, (usize, usize))> = None;
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (c, r) = (here.0 as i64 + dc, here.1 as i64 + dr);
                    if (dc, dr) == (0, 0) || !skeleton.get_signed(c, r) {
                        continue;
                    }
                    let p = (c as usize, r as usize);
                    if visited.get(p.0, p.1) {
                        continue;
                    }
                    let cand = (dc * dc + dr * dr, p);
                    if next.is_none_or(|b| closer(cand, b)) {
                        next = Some(cand);
                    }
                }
            }
            match next {
                Some((_, p)) => here = p,
                None => break,
            }
        }
        remaining.retain(|p| !visited.get(p.0, p.1));
    }
    steps.push(PenStep::END);
    Ok(steps)
}

/// Mark every pen-down position on a `width x height` canvas. Pen-up steps
/// mark nothing; positions accumulate from the top-left origin.
pub fn render_sequence(steps: &[PenStep], width: usize, height: usize) -> Result<BinaryImage> {
    let mut canvas = BinaryImage::empty(width, height);
    let (mut x, mut y) = (0i64, 0i64);
    for (index, step) in steps.iter().enumerate() {
        x += step.dx as i64;
        y += step.dy as i64;
        if step.eos {
            continue;
        }
        if x < 0 || y < 0 || x >= width as i64 || y >= height as i64 {
            return Err(Error::OutOfCanvas { index, x, y });
        }
        canvas.set(x as usize, y as usize, true);
    }
    Ok(canvas)
}
