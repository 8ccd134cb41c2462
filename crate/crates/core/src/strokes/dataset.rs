//! Dataset conversion and the line-oriented stroke file format:
//!
//! ```text
//! # label 7
//! 6,4,0,0
//! 1,-1,0,0
//! 0,0,1,1
//!
//! ```

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use super::image::binarize;
use super::image::GrayImage;
use super::sequence::{PenStep, StrokeSequence};
use super::thin::thin;
use super::threshold::select_threshold;
use super::trace::extract_strokes;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedImage {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct Conversion {
    pub sequences: Vec<StrokeSequence>,
    /// Source index of each converted sequence.
    pub source_index: Vec<usize>,
    pub skipped: Vec<SkippedImage>,
}

impl Conversion {
    pub fn mean_length(&self) -> f64 {
        if self.sequences.is_empty() {
            return 0.0;
        }
        self.sequences.iter().map(|s| s.len()).sum::<usize>() as f64 / self.sequences.len() as f64
    }

    /// Nearest-rank percentile of the sequence lengths, `q` in `[0, 1]`.
    pub fn length_percentile(&self, q: f64) -> usize {
        let mut lengths: Vec<usize> = self.sequences.iter().map(|s| s.len()).collect();
        if lengths.is_empty() {
            return 0;
        }
        lengths.sort_unstable();
        let rank = ((q * lengths.len() as f64).ceil() as usize).clamp(1, lengths.len());
        lengths[rank - 1]
    }
}

pub fn convert_image(img: &GrayImage, label: u8) -> Result<StrokeSequence> {
    let level = select_threshold(img)?;
    let skeleton = thin(&binarize(img, level));
    let steps = extract_strokes(&skeleton)?;
    StrokeSequence::new(steps, label)
}

/// Convert images in parallel; output order follows input order. Degenerate
/// images are skipped, logged and listed in the result.
pub fn convert_dataset(images: &[GrayImage], labels: &[u8]) -> Result<Conversion> {
    if images.len() != labels.len() {
        return Err(Error::Invalid(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    let results: Vec<Result<StrokeSequence>> = images
        .par_iter()
        .zip(labels.par_iter())
        .map(|(img, &label)| convert_image(img, label))
        .collect();

    let mut out = Conversion::default();
    for (index, result) in results.into_iter().enumerate() {
        match result {
            Ok(seq) => {
                out.sequences.push(seq);
                out.source_index.push(index);
            }
            Err(Error::Degenerate(reason)) => {
                log::warn!("skipping image {index}: {reason}");
                out.skipped.push(SkippedImage { index, reason });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

pub fn write_dataset_string(sequences: &[StrokeSequence]) -> String {
    let mut out = String::new();
    for seq in sequences {
        writeln!(out, "# label {}", seq.label()).unwrap();
        for s in seq.steps() {
            writeln!(out, "{},{},{},{}", s.dx, s.dy, s.eos as u8, s.eod as u8).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_dataset(path: &Path, sequences: &[StrokeSequence]) -> Result<()> {
    std::fs::write(path, write_dataset_string(sequences)).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Vec<StrokeSequence>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_dataset_str(&text).map_err(|e| match e {
        Error::Format { line, message, .. } => Error::Format {
            path: path.to_path_buf(),
            line,
            message,
        },
        other => other,
    })
}

pub fn read_dataset_str(text: &str) -> Result<Vec<StrokeSequence>> {
    let err = |line: usize, message: String| Error::Format {
        path: "<memory>".into(),
        line,
        message,
    };
    let mut sequences = Vec::new();
    let mut current: Option<(u8, Vec<PenStep>, usize)> = None;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if let Some(rest) = line.strip_prefix("# label ") {
            if current.is_some() {
                return Err(err(lineno, "header inside an unterminated sequence".into()));
            }
            let label: u8 = rest
                .parse()
                .map_err(|_| err(lineno, format!("bad label {rest:?}")))?;
            current = Some((label, Vec::new(), lineno));
        } else if line.is_empty() {
            let Some((label, steps, start)) = current.take() else {
                return Err(err(lineno, "blank line outside a sequence".into()));
            };
            let seq = StrokeSequence::new(steps, label).map_err(|e| err(start, e.to_string()))?;
            sequences.push(seq);
        } else {
            let Some((_, steps, _)) = current.as_mut() else {
                return Err(err(lineno, "step outside a sequence".into()));
            };
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(err(lineno, format!("expected dx,dy,eos,eod in {line:?}")));
            }
            let int = |s: &str| {
                s.parse::<i32>()
                    .map_err(|_| err(lineno, format!("bad integer {s:?}")))
            };
            let flag = |s: &str| match s {
                "0" => Ok(false),
                "1" => Ok(true),
                _ => Err(err(lineno, format!("bad flag {s:?}"))),
            };
            steps.push(PenStep {
                dx: int(fields[0])?,
                dy: int(fields[1])?,
                eos: flag(fields[2])?,
                eod: flag(fields[3])?,
            });
        }
    }
    if current.is_some() {
        return Err(err(
            text.lines().count(),
            "missing blank line after last sequence".into(),
        ));
    }
    Ok(sequences)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(steps: &[(i32, i32)], label: u8) -> StrokeSequence {
        let mut v: Vec<PenStep> = steps.iter().map(|&(x, y)| PenStep::moveto(x, y)).collect();
        v.push(PenStep::END);
        StrokeSequence::new(v, label).unwrap()
    }

    #[test]
    fn format_is_exact() {
        let text = write_dataset_string(&[seq(&[(6, 4), (1, -1)], 7)]);
        assert_eq!(text, "# label 7\n6,4,0,0\n1,-1,0,0\n0,0,1,1\n\n");
        assert_eq!(write_dataset_string(&[]), "");
        assert!(read_dataset_str("").unwrap().is_empty());
    }

    #[test]
    fn malformed_files_are_rejected() {
        for bad in [
            "# label 7\n1,1,0,0\n",
            "# label 7\n1,1,0\n\n",
            "# label 7\n1,1,0,0\n\n",
            "1,1,0,0\n\n",
            "# label x\n0,0,1,1\n\n",
            "# label 7\n0,0,1,2\n\n",
            "# label 7\n0,0,1,1 \n\n",
        ] {
            assert!(read_dataset_str(bad).is_err(), "{bad:?} accepted");
        }
    }

    #[test]
    fn conversion_skips_blank_images() {
        let blank = GrayImage::new(28, 28, vec![0; 784]).unwrap();
        let mut pixels = vec![0u8; 784];
        for c in 5..20 {
            pixels[10 * 28 + c] = 200;
            pixels[11 * 28 + c] = 90;
        }
        let bar = GrayImage::new(28, 28, pixels).unwrap();
        let conv = convert_dataset(&[blank, bar.clone(), bar], &[1, 2, 3]).unwrap();
        assert_eq!(conv.skipped.len(), 1);
        assert_eq!(conv.skipped[0].index, 0);
        assert_eq!(conv.source_index, vec![1, 2]);
        assert_eq!(conv.sequences[0].label(), 2);
        assert_eq!(conv.sequences[0].steps(), conv.sequences[1].steps());
        assert!(convert_dataset(&[], &[1]).is_err());
    }

    fn arb_sequence() -> impl Strategy<Value = StrokeSequence> {
        let step = prop_oneof![
            4 => (-27i32..28, -27i32..28).prop_map(|(x, y)| PenStep::moveto(x, y)),
            1 => Just(PenStep::PEN_UP),
        ];
        (proptest::collection::vec(step, 0..60), 0u8..10).prop_map(|(mut steps, label)| {
            steps.push(PenStep::END);
            StrokeSequence::new(steps, label).unwrap()
        })
    }

    proptest! {
        #[test]
        fn file_round_trip(seqs in proptest::collection::vec(arb_sequence(), 0..20)) {
            let text = write_dataset_string(&seqs);
            prop_assert!(!text.lines().any(|l| l.ends_with(' ')));
            prop_assert_eq!(read_dataset_str(&text).unwrap(), seqs);
        }
    }
}
