//! Line-oriented `key = value` files shared by branch and profiler specs.
//!
//! Blank lines and `#` comments are ignored. Keys may repeat; order is kept.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

pub fn parse(text: &str) -> Result<Vec<Entry>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::malformed("config", format!("line {}: expected `key = value`", i + 1)))?;
        let key = k.trim();
        if key.is_empty() {
            return Err(Error::malformed("config", format!("line {}: empty key", i + 1)));
        }
        out.push(Entry {
            line: i + 1,
            key: key.to_string(),
            value: v.trim().to_string(),
        });
    }
    Ok(out)
}

impl Entry {
    pub fn parse_value<T: std::str::FromStr>(&self) -> Result<T> {
        self.value.parse().map_err(|_| {
            Error::malformed(
                "config",
                format!("line {}: bad value `{}` for `{}`", self.line, self.value, self.key),
            )
        })
    }

    pub fn parse_bool(&self) -> Result<bool> {
        match self.value.as_str() {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            _ => Err(Error::malformed(
                "config",
                format!("line {}: `{}` is not a boolean", self.line, self.value),
            )),
        }
    }
}

/// Parse whitespace separated `name=value` attributes, e.g. `k=3 cin=64`.
pub fn attributes(value: &str) -> Result<Vec<(&str, &str)>> {
    value
        .split_whitespace()
        .map(|tok| {
            tok.split_once('=')
                .ok_or_else(|| Error::malformed("config", format!("attribute `{tok}` lacks `=`")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_repeats() {
        let e = parse("# header\nwidth = 128\n\nlayer = a # trailing\nlayer = b\n").unwrap();
        assert_eq!(e.len(), 3);
        assert_eq!(e[0].key, "width");
        assert_eq!(e[0].parse_value::<usize>().unwrap(), 128);
        assert_eq!(e[2].value, "b");
        assert_eq!(e[2].line, 5);
    }

    #[test]
    fn rejects_lines_without_equals() {
        assert!(parse("width 128").is_err());
        assert!(parse(" = 3").is_err());
    }
}
