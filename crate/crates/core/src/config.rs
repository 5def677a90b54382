//! Scenario files.
//!
//! A scenario file is TOML: top-level keys for the run, plus the sections
//! `[radio]`, `[channels]`, `[pu]`, `[frame]`, `[mac]`, `[traffic]` and
//! `[baseline]`. Every key is optional and defaults to the standard
//! scenario; unknown keys are rejected. An empty file is the default
//! scenario.
//!
//! ```toml
//! seed = 7
//! flows = 24
//! duration = 100.0
//!
//! [frame]
//! num_slots = 20
//!
//! [mac]
//! overhear = false
//! ```

use std::path::Path;

use crate::engine::Scenario;
use crate::error::{Error, Result};

/// Parses scenario text; `origin` names the source in errors.
pub fn parse_config_str(text: &str, origin: &str) -> Result<Scenario> {
    let scenario: Scenario = toml::from_str(text).map_err(|e| {
        let start = e.span().map_or(0, |span| span.start.min(text.len()));
        Error::Parse {
            path: origin.to_string(),
            line: text[..start].matches('\n').count() + 1,
            message: e.message().to_string(),
        }
    })?;
    scenario.validate()?;
    Ok(scenario)
}

/// Reads and validates a scenario file. A relative `positions_file` is
/// resolved against the scenario file's directory.
pub fn parse_config(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut s = parse_config_str(&text, &path.display().to_string())?;
    if let (Some(p), Some(dir)) = (&s.positions_file, path.parent()) {
        if p.is_relative() {
            s.positions_file = Some(dir.join(p));
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(parse_config_str("", "t").unwrap(), Scenario::default());
    }

    #[test]
    fn override_flows() {
        assert_eq!(parse_config_str("flows = 24\n", "t").unwrap().flows, 24);
    }

    #[test]
    fn zero_slots_names_field() {
        let e = parse_config_str("[frame]\nnum_slots = 0\n", "t").unwrap_err();
        assert!(matches!(e, Error::Validation { field: "frame.num_slots", .. }), "{e}");
    }

    #[test]
    fn unknown_key_reports_line() {
        let e = parse_config_str("seed = 1\n\n[mac]\nbogus = 3\n", "t").unwrap_err();
        match e {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 4);
                assert!(message.contains("bogus"), "{message}");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn malformed_value_reports_line() {
        let e = parse_config_str("seed = 1\nflows = \"many\"\n", "t").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }), "{e}");
    }
}
