use std::fmt::Write as _;

/// Bumped whenever the layout of rendered reports changes.
pub const REPORT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Text,
    Csv,
}

/// Ordered key/value lines followed by pass/fail verdicts.
#[derive(Debug, Default)]
pub struct Report {
    command: String,
    rows: Vec<(String, String)>,
    verdicts: Vec<(String, bool)>,
    /// Free text appended verbatim after the report (a file body, a table).
    tail: String,
}

impl Report {
    pub fn new(command: &str) -> Self {
        Report { command: command.to_string(), ..Default::default() }
    }

    pub fn row(&mut self, key: impl Into<String>, value: impl ToString) {
        self.rows.push((key.into(), value.to_string()));
    }

    pub fn verdict(&mut self, name: impl Into<String>, ok: bool) {
        self.verdicts.push((name.into(), ok));
    }

    pub fn tail(&mut self, text: &str) {
        self.tail.push_str(text);
    }

    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|(_, ok)| *ok)
    }

    pub fn render(&self, format: Format) -> String {
        let mut s = String::new();
        match format {
            Format::Text => {
                let _ = writeln!(s, "quasimiura report v{REPORT_VERSION}: {}", self.command);
                for (k, v) in &self.rows {
                    let _ = writeln!(s, "  {k}: {v}");
                }
                for (k, ok) in &self.verdicts {
                    let _ = writeln!(s, "{} {k}", if *ok { "PASS" } else { "FAIL" });
                }
                let _ = writeln!(s, "verdict: {}", if self.passed() { "PASS" } else { "FAIL" });
                if !self.tail.is_empty() {
                    s.push('\n');
                    s.push_str(&self.tail);
                }
            }
            Format::Csv => {
                let _ = writeln!(s, "# quasimiura report v{REPORT_VERSION}: {}", self.command);
                s.push_str("kind,key,value\n");
                for (k, v) in &self.rows {
                    let _ = writeln!(s, "row,{},{}", csv_field(k), csv_field(v));
                }
                for (k, ok) in &self.verdicts {
                    let _ = writeln!(s, "verdict,{},{}", csv_field(k), if *ok { "pass" } else { "fail" });
                }
                let _ = writeln!(s, "verdict,overall,{}", if self.passed() { "pass" } else { "fail" });
            }
        }
        s
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_quotes_commas() {
        let mut r = Report::new("x");
        r.row("a", "1, 2");
        r.verdict("ok", true);
        let s = r.render(Format::Csv);
        assert!(s.contains("row,a,\"1, 2\""));
        assert!(s.ends_with("verdict,overall,pass\n"));
    }

    #[test]
    fn one_failure_fails_the_report() {
        let mut r = Report::new("x");
        r.verdict("a", true);
        r.verdict("b", false);
        assert!(!r.passed());
        assert!(r.render(Format::Text).contains("FAIL b\nverdict: FAIL"));
    }
}
