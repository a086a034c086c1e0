use std::io::{BufRead, Write};
use std::path::Path;

use image::RgbImage;
use insertkit_pipeline::{Chooser, PipelineError, Result};

/// Reads candidate choices from a line-based reader, numbered from 1 as
/// shown on the contact sheet.
pub struct PromptChooser<R, W> {
    input: R,
    output: W,
}

impl<R: BufRead, W: Write> PromptChooser<R, W> {
    pub fn new(input: R, output: W) -> Self {
        Self { input, output }
    }
}

pub fn parse_choice(line: &str, n: usize) -> Option<usize> {
    let i: usize = line.trim().parse().ok()?;
    (1..=n).contains(&i).then(|| i - 1)
}

impl<R: BufRead, W: Write> Chooser for PromptChooser<R, W> {
    fn choose(&mut self, stage: &str, candidates: &[RgbImage], sheet: &Path) -> Result<usize> {
        let n = candidates.len();
        writeln!(self.output, "{stage}: {n} candidates, left to right in {}", sheet.display())?;
        loop {
            write!(self.output, "{stage}: pick 1-{n}: ")?;
            self.output.flush()?;
            let mut line = String::new();
            if self.input.read_line(&mut line)? == 0 {
                return Err(PipelineError::param(format!("no selection for `{stage}`: input closed")));
            }
            match parse_choice(&line, n) {
                Some(i) => return Ok(i),
                None => writeln!(self.output, "expected a number from 1 to {n}, got `{}`", line.trim())?,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn choices_are_one_based_and_bounded() {
        assert_eq!(parse_choice(" 3\n", 5), Some(2));
        assert_eq!(parse_choice("1", 1), Some(0));
        assert_eq!(parse_choice("0", 5), None);
        assert_eq!(parse_choice("6", 5), None);
        assert_eq!(parse_choice("x", 5), None);
    }

    #[test]
    fn bad_lines_are_asked_again() {
        let cands = vec![RgbImage::new(1, 1); 3];
        let mut out = Vec::new();
        let mut c = PromptChooser::new(&b"9\nabc\n2\n"[..], &mut out);
        assert_eq!(c.choose("compose", &cands, Path::new("s.png")).unwrap(), 1);
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.matches("expected a number").count(), 2);
    }

    #[test]
    fn closed_input_is_an_error() {
        let cands = vec![RgbImage::new(1, 1); 2];
        let mut c = PromptChooser::new(&b""[..], Vec::new());
        assert!(c.choose("refine", &cands, Path::new("s.png")).is_err());
    }
}
