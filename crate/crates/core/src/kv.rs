//! Plain-text `key=value` files: one pair per line, `#` starts a comment.

use std::collections::BTreeMap;

pub fn parse(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key=value, got `{raw}`", n + 1))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub fn render<'a>(pairs: impl IntoIterator<Item = (&'a str, String)>) -> String {
    pairs.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

pub fn get<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T, String> {
    let raw = map.get(key).ok_or_else(|| format!("missing key `{key}`"))?;
    raw.parse().map_err(|_| format!("bad value `{raw}` for `{key}`"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_pairs_and_skips_comments() {
        let m = parse("# header\nlr = 0.001\n\nbatch=8 # trailing\n").unwrap();
        assert_eq!(m["lr"], "0.001");
        assert_eq!(get::<usize>(&m, "batch").unwrap(), 8);
        assert!(get::<usize>(&m, "epochs").is_err());
        assert!(parse("novalue\n").is_err());
    }
}
