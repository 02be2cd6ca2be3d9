//! CSV assembly: quoting, number formatting and the provenance trailer.

use sha2::{Digest, Sha256};

use super::ExperimentConfig;

/// SHA-256 of the canonical config text. The output directory is left out
/// so moving a run elsewhere keeps its hash.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    hex::encode(Sha256::digest(canonical(cfg).as_bytes()))
}

fn canonical(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.out = None;
    c.to_string()
}

/// Quotes a field when it holds a comma, quote or newline.
pub(crate) fn field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub(crate) fn num(x: f64) -> String {
    format!("{x:e}")
}

/// A header plus rows, finished with the config-hash comment.
pub(crate) struct Table {
    body: String,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            body: format!("{}\n", header.join(",")),
        }
    }

    /// Wraps an already rendered CSV body (header included).
    pub fn from_body(body: String) -> Self {
        Table { body }
    }

    pub fn row(&mut self, cells: &[String]) {
        self.body.push_str(&cells.join(","));
        self.body.push('\n');
    }

    /// Appends the config as comment lines ahead of the trailer.
    pub fn finish_with_echo(mut self, cfg: &ExperimentConfig) -> String {
        for line in canonical(cfg).lines().filter(|l| !l.is_empty()) {
            self.body.push_str("# ");
            self.body.push_str(line);
            self.body.push('\n');
        }
        self.finish(cfg)
    }

    pub fn finish(mut self, cfg: &ExperimentConfig) -> String {
        self.body.push_str(&format!("# config-hash = {}\n", config_hash(cfg)));
        self.body
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fields_with_separators_are_quoted() {
        assert_eq!(field("w(0)"), "w(0)");
        assert_eq!(field("max(a, b)"), "\"max(a, b)\"");
        assert_eq!(field("say \"x\""), "\"say \"\"x\"\"\"");
    }
}
