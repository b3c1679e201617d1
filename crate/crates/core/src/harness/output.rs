//! In-memory output bundles, written all at once so that a failure leaves no
//! partial files behind.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::grid::{write_field_csv, DiscreteDomain};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Bundle {
    files: Vec<(String, Vec<u8>)>,
}

impl Bundle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, contents: Vec<u8>) {
        self.files.push((name.into(), contents));
    }

    pub fn add_field(&mut self, name: impl Into<String>, dom: &DiscreteDomain, values: &[f64]) {
        let mut buf = Vec::new();
        write_field_csv(dom, values, &mut buf).expect("writing to memory");
        self.add(name, buf);
    }

    /// A boolean node mask as a 0/1 field.
    pub fn add_mask(&mut self, name: impl Into<String>, dom: &DiscreteDomain, mask: &[bool]) {
        let mut buf = String::new();
        let two_d = dom.dim() == 2;
        buf.push_str(if two_d { "x,y,value\n" } else { "x,value\n" });
        for (c, &m) in dom.coords().iter().zip(mask) {
            let v = u8::from(m);
            if two_d {
                buf.push_str(&format!("{:e},{:e},{v}\n", c[0], c[1]));
            } else {
                buf.push_str(&format!("{:e},{v}\n", c[0]));
            }
        }
        self.add(name, buf.into_bytes());
    }

    pub fn add_json<T: Serialize>(&mut self, name: impl Into<String>, value: &T) {
        let mut text = serde_json::to_string_pretty(value).expect("summary serializes");
        text.push('\n');
        self.add(name, text.into_bytes());
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, c)| c.as_slice())
    }

    /// Writes every file into `dir`, creating it if needed. On failure the
    /// files already written (and the directory, if it was created here) are
    /// removed.
    pub fn write(&self, dir: &Path) -> io::Result<Vec<PathBuf>> {
        let created_dir = !dir.exists();
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for (name, contents) in &self.files {
            let path = dir.join(name);
            if let Err(e) = fs::write(&path, contents) {
                for p in &written {
                    let _ = fs::remove_file(p);
                }
                let _ = fs::remove_file(&path);
                if created_dir {
                    let _ = fs::remove_dir(dir);
                }
                return Err(e);
            }
            written.push(path);
        }
        Ok(written)
    }
}

/// Compact name fragment for a threshold, e.g. `1e-2`.
pub fn delta_tag(delta: f64) -> String {
    format!("{delta:e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_domain, DomainSpec};

    #[test]
    fn writes_and_cleans_up() {
        let dom = build_domain(&DomainSpec::unit_interval(3)).unwrap();
        let mut b = Bundle::new();
        b.add_field("f.csv", &dom, &[1.0, 2.0, 3.0]);
        b.add_mask("m.csv", &dom, &[true, false, true]);
        b.add_json("s.json", &serde_json::json!({"a": 1}));
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("out");
        let paths = b.write(&out).unwrap();
        assert_eq!(paths.len(), 3);
        assert_eq!(fs::read_to_string(out.join("m.csv")).unwrap(), "x,value\n0e0,1\n5e-1,0\n1e0,1\n");

        // A name that is a directory forces a failure after the first file.
        let bad = tmp.path().join("bad");
        let mut b2 = Bundle::new();
        b2.add("one.txt", b"1".to_vec());
        b2.add("sub/two.txt", b"2".to_vec());
        assert!(b2.write(&bad).is_err());
        assert!(!bad.exists());
        assert_eq!(delta_tag(1e-4), "1e-4");
    }
}
