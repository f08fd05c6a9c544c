//! JSON-lines probe files for `inspect`: one object per line with a query
//! vector and an optional ground-truth tag.

use serde::{Deserialize, Serialize};

use fwpkm::numeric::Real;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeSpec {
    pub query: Vec<Real>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_tag: Option<String>,
}

/// Parse a probe file from untrusted text. Errors name the offending line.
pub fn parse_probes(text: &str) -> Result<Vec<ProbeSpec>, String> {
    let mut probes = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let probe: ProbeSpec = serde_json::from_str(line)
            .map_err(|e| format!("probe line {}: {e}", idx + 1))?;
        if probe.query.is_empty() {
            return Err(format!("probe line {}: empty query", idx + 1));
        }
        if !probe.query.iter().all(|v| v.is_finite()) {
            return Err(format!("probe line {}: non-finite query entry", idx + 1));
        }
        probes.push(probe);
    }
    Ok(probes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_valid_lines_and_skips_blanks() {
        let text = "{\"query\": [0.5, -1.0]}\n\n{\"query\": [1.0], \"truth_tag\": \"x\"}\n";
        let probes = parse_probes(text).unwrap();
        assert_eq!(probes.len(), 2);
        assert_eq!(probes[1].truth_tag.as_deref(), Some("x"));
    }

    #[test]
    fn malformed_line_is_named() {
        let text = "{\"query\": [0.5]}\nnot json\n";
        let e = parse_probes(text).unwrap_err();
        assert!(e.contains("line 2"), "{e}");
    }

    #[test]
    fn rejects_empty_or_non_finite_queries() {
        assert!(parse_probes("{\"query\": []}\n").is_err());
        assert!(parse_probes("{\"query\": [1e400]}\n").is_err());
    }
}
