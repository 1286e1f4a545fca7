//! Line-based execution traces.
//!
//! Each line is `<cycle> <source> <event>`, where the source is `PE(r,c)`,
//! `GIN`, `GON` or `PASS`.

use std::io::Write;

use crate::compiler::program::CompiledLayer;
use crate::error::Result;
use crate::sim::{run_with, ArrayConfig, RunOptions, SimResult};

pub use super::engine::describe;

/// Run a layer and return its trace alongside the result.
pub fn capture(compiled: &CompiledLayer, a: &[f32], b: &[f32], cfg: &ArrayConfig) -> Result<(SimResult, String)> {
    let mut buf: Vec<u8> = Vec::new();
    let res = run_with(compiled, a, b, cfg, &RunOptions::default(), Some(&mut buf as &mut dyn Write))?;
    Ok((res, String::from_utf8_lossy(&buf).into_owned()))
}

/// A parsed trace line.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceLine<'a> {
    pub cycle: u64,
    pub source: &'a str,
    pub event: &'a str,
}

pub fn parse_line(line: &str) -> Option<TraceLine<'_>> {
    let (cycle, rest) = line.split_once(' ')?;
    let (source, event) = rest.split_once(' ').unwrap_or((rest, ""));
    Some(TraceLine {
        cycle: cycle.parse().ok()?,
        source,
        event,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_pe_line() {
        let l = parse_line("12 PE(0,3) MAC w0 x1 p0").unwrap();
        assert_eq!(l.cycle, 12);
        assert_eq!(l.source, "PE(0,3)");
        assert_eq!(l.event, "MAC w0 x1 p0");
        assert!(parse_line("x PE").is_none());
    }
}
