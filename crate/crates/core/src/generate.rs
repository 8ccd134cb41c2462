//! Inspecting trained models: teacher-forced predictions, free-running
//! generation, per-step class outputs, and SVG/PGM rendering.

use std::fmt::Write as _;

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{input_vector, point_estimate, sample_step, Model, INPUT_SIZE};
use crate::strokes::{BinaryImage, PenStep, SeqView, StrokeSequence};

pub const DEFAULT_MAX_STEPS: usize = 200;

/// Point estimate for the next step, offsets in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub dx: f64,
    pub dy: f64,
    pub eos_p: f64,
    pub eod_p: f64,
}

/// Feed the true steps one by one; entry `t` predicts step `t + 1`.
pub fn predict_guided(model: &Model, sequence: SeqView<'_>) -> Result<Vec<Prediction>> {
    let scale = model.config().scale;
    let mut stepper = model.stepper()?;
    let inputs = &sequence.steps[..sequence.points()];
    inputs
        .iter()
        .map(|step| {
            let out = stepper.step(&input_vector(step, scale))?;
            let (dx, dy) = point_estimate(out, scale);
            Ok(Prediction {
                dx,
                dy,
                eos_p: out.eos_p,
                eod_p: out.eod_p,
            })
        })
        .collect()
}

/// Root mean squared offset error of a guided trace against its sequence,
/// in the same form as the training metric.
pub fn trace_rmse(trace: &[Prediction], sequence: SeqView<'_>) -> Option<f64> {
    if trace.is_empty() {
        return None;
    }
    let sse: f64 = trace
        .iter()
        .zip(&sequence.steps[1..])
        .map(|(p, s)| (p.dx - s.dx as f64).powi(2) + (p.dy - s.dy as f64).powi(2))
        .sum();
    Some((sse / (2 * trace.len()) as f64).sqrt())
}

/// Sample from the model, feeding each sampled step back in. Starts from
/// the zero input and stops at a sampled end of digit; after `max_steps`
/// samples without one, the end marker is appended.
pub fn generate_unguided<R: Rng + ?Sized>(
    model: &Model,
    rng: &mut R,
    max_steps: usize,
    label: u8,
) -> Result<StrokeSequence> {
    if max_steps == 0 {
        return Err(Error::Invalid("max_steps must be at least 1".into()));
    }
    let scale = model.config().scale;
    let mut stepper = model.stepper()?;
    let mut input = [0.0; INPUT_SIZE];
    let mut steps = Vec::new();
    for _ in 0..max_steps {
        let out = stepper.step(&input)?;
        let step = sample_step(out, scale, 1.0, rng);
        if step.eod {
            break;
        }
        steps.push(step);
        input = input_vector(&step, scale);
    }
    steps.push(PenStep::END);
    StrokeSequence::new(steps, label)
}

/// Class probabilities after each input step.
pub fn classify_trace(model: &Model, sequence: SeqView<'_>) -> Result<Vec<Vec<f64>>> {
    let scale = model.config().scale;
    let mut stepper = model.stepper()?;
    sequence.steps[..sequence.points()]
        .iter()
        .map(|step| Ok(stepper.step(&input_vector(step, scale))?.class_p.clone()))
        .collect()
}

/// Index of the largest probability in the last row.
pub fn final_answer(trace: &[Vec<f64>]) -> Option<usize> {
    let last = trace.last()?;
    let mut best = 0;
    for (i, &p) in last.iter().enumerate() {
        if p > last[best] {
            best = i;
        }
    }
    Some(best)
}

/// Pen-down positions of each stroke, accumulated from the origin.
pub fn strokes_of(steps: &[PenStep]) -> Vec<Vec<(i64, i64)>> {
    let mut strokes = Vec::new();
    let mut current = Vec::new();
    let (mut x, mut y) = (0i64, 0i64);
    for step in steps {
        x += i64::from(step.dx);
        y += i64::from(step.dy);
        if step.eos {
            if !current.is_empty() {
                strokes.push(std::mem::take(&mut current));
            }
        } else {
            current.push((x, y));
        }
    }
    if !current.is_empty() {
        strokes.push(current);
    }
    strokes
}

const CELL: i64 = 32;

/// One `<g>` per item, laid out left to right in 32-pixel cells. Strokes
/// become polylines; a stroke of one point becomes a dot.
pub fn render_svg<S: AsRef<[PenStep]>>(items: &[S]) -> String {
    let width = CELL * items.len().max(1) as i64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {width} {CELL}\">",
        width * 4,
        CELL * 4,
    );
    let _ = writeln!(
        out,
        "<rect width=\"{width}\" height=\"{CELL}\" fill=\"white\"/>"
    );
    for (i, item) in items.iter().enumerate() {
        let _ = writeln!(
            out,
            "<g transform=\"translate({} 2)\" stroke=\"black\" stroke-width=\"0.8\" fill=\"none\" stroke-linecap=\"round\" stroke-linejoin=\"round\">",
            CELL * i as i64 + 2
        );
        for stroke in strokes_of(item.as_ref()) {
            if let [(x, y)] = stroke.as_slice() {
                let _ = writeln!(
                    out,
                    "<circle cx=\"{x}\" cy=\"{y}\" r=\"0.6\" fill=\"black\"/>"
                );
            } else {
                let pts: Vec<String> = stroke.iter().map(|(x, y)| format!("{x},{y}")).collect();
                let _ = writeln!(out, "<polyline points=\"{}\"/>", pts.join(" "));
            }
        }
        out.push_str("</g>\n");
    }
    out.push_str("</svg>\n");
    out
}

/// Binary PGM, ink white on black.
pub fn render_pgm(image: &BinaryImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.bits().iter().map(|&b| if b { 255u8 } else { 0 }));
    out
}

/// Inverse of [`render_pgm`]; any nonzero pixel counts as ink.
pub fn parse_pgm(bytes: &[u8]) -> Result<BinaryImage> {
    let bad = |message: &str| Error::Parse {
        offset: 0,
        message: format!("PGM: {message}"),
    };
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("bad header"))?);
    }
    if fields[0] != "P5" {
        return Err(bad("not a binary graymap"));
    }
    let dim = |s: &str| s.parse::<usize>().map_err(|_| bad("bad dimension"));
    let (w, h) = (dim(fields[1])?, dim(fields[2])?);
    if fields[3] != "255" {
        return Err(bad("only 8-bit images are supported"));
    }
    let data = &bytes[pos + 1..];
    if data.len() != w * h {
        return Err(bad("pixel data has the wrong length"));
    }
    BinaryImage::from_bits(w, h, data.iter().map(|&v| v != 0).collect())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::model::{LayerKind, ModelConfig};
    use crate::strokes::{render_sequence, CANVAS};
    use crate::trainer::{evaluate_accuracy, evaluate_rmse};

    fn model(kind: LayerKind, seed: u64) -> Model {
        let config = ModelConfig {
            num_mixtures: 3,
            hidden_sizes: vec![8, 8],
            layer_kind: kind,
            scale: 10.0,
        };
        Model::with_init_scale(config, 0.3, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn digit() -> StrokeSequence {
        let steps = vec![
            PenStep::moveto(6, 4),
            PenStep::moveto(1, 1),
            PenStep::moveto(1, 2),
            PenStep::PEN_UP,
            PenStep::moveto(3, -2),
            PenStep::moveto(0, 1),
            PenStep::END,
        ];
        StrokeSequence::new(steps, 7).unwrap()
    }

    #[test]
    fn guided_trace_matches_evaluation() {
        for kind in [LayerKind::Recurrent, LayerKind::Feedforward] {
            let m = model(kind, 1);
            let seq = digit();
            let trace = predict_guided(&m, seq.view()).unwrap();
            assert_eq!(trace.len(), seq.len() - 1);
            assert_eq!(trace, predict_guided(&m, seq.view()).unwrap());
            let rmse = trace_rmse(&trace, seq.view()).unwrap();
            let reference = evaluate_rmse(&m, &[seq.view()]).unwrap();
            assert!((rmse - reference).abs() < 1e-12, "{rmse} vs {reference}");
        }
    }

    #[test]
    fn classification_trace_is_consistent() {
        let m = model(LayerKind::Recurrent, 2);
        let seq = digit();
        let trace = classify_trace(&m, seq.view()).unwrap();
        assert_eq!(trace.len(), seq.len() - 1);
        for row in &trace {
            assert_eq!(row.len(), 10);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let answer = final_answer(&trace).unwrap();
        let accuracy = evaluate_accuracy(&m, &[seq.view()]).unwrap();
        assert_eq!(accuracy == 1.0, answer == 7);
        for label in 0..10u8 {
            let relabelled = StrokeSequence::new(seq.steps().to_vec(), label).unwrap();
            let acc = evaluate_accuracy(&m, &[relabelled.view()]).unwrap();
            assert_eq!(acc == 1.0, answer == usize::from(label));
        }
    }

    #[test]
    fn generation_is_valid_and_seeded() {
        for kind in [LayerKind::Recurrent, LayerKind::Feedforward] {
            let m = model(kind, 3);
            for seed in 0..20 {
                let a = generate_unguided(&m, &mut ChaCha8Rng::seed_from_u64(seed), 25, 0).unwrap();
                let b = generate_unguided(&m, &mut ChaCha8Rng::seed_from_u64(seed), 25, 0).unwrap();
                assert_eq!(a, b);
                assert!(a.len() <= 26);
                assert_eq!(a.steps().last(), Some(&PenStep::END));
            }
        }
        let m = model(LayerKind::Recurrent, 3);
        let one = generate_unguided(&m, &mut ChaCha8Rng::seed_from_u64(0), 1, 4).unwrap();
        assert!(one.len() <= 2);
        assert!(generate_unguided(&m, &mut ChaCha8Rng::seed_from_u64(0), 0, 4).is_err());
    }

    #[test]
    fn svg_strokes_and_dots() {
        let dot = [PenStep::moveto(3, 5), PenStep::END];
        let svg = render_svg(&[&dot[..]]);
        assert_eq!(svg.matches("<circle").count(), 1);
        assert!(svg.contains("cx=\"3\" cy=\"5\""));
        assert_eq!(svg.matches("<polyline").count(), 0);

        let seq = digit();
        let svg = render_svg(&[seq.steps(), seq.steps(), &dot[..]]);
        assert_eq!(svg.matches("<g ").count(), 3);
        assert_eq!(svg.matches("<polyline").count(), 4);
        assert!(svg.contains("points=\"6,4 7,5 8,7\""));
        assert!(svg.contains("points=\"11,5 11,6\""));
    }

    #[test]
    fn pgm_round_trip() {
        let seq = digit();
        let image = render_sequence(seq.steps(), CANVAS, CANVAS).unwrap();
        let bytes = render_pgm(&image);
        assert!(bytes.starts_with(b"P5\n28 28\n255\n"));
        assert_eq!(bytes.len(), 13 + 28 * 28);
        assert_eq!(parse_pgm(&bytes).unwrap(), image);
        assert!(parse_pgm(b"P2\n1 1\n255\n\0").is_err());
        assert!(parse_pgm(&bytes[..100]).is_err());
    }
}
