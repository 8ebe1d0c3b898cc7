//! Dataset manifest: CSV with header `path,label,split_1,...,split_S`, each
//! split column holding `train` or `test`.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    /// As written in the file; relative paths resolve against the manifest's directory.
    pub path: String,
    pub label: String,
    /// One flag per split: `true` when the row is in that split's test set.
    pub test: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub split_names: Vec<String>,
    pub entries: Vec<ManifestEntry>,
    pub base_dir: PathBuf,
}

const WHAT: &str = "manifest";

impl Manifest {
    pub fn split_count(&self) -> usize {
        self.split_names.len()
    }

    /// Sorted class names.
    pub fn vocabulary(&self) -> Vec<String> {
        let mut v: Vec<String> = self.entries.iter().map(|e| e.label.clone()).collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn label_indices(&self) -> Vec<usize> {
        let vocab = self.vocabulary();
        self.entries
            .iter()
            .map(|e| vocab.binary_search(&e.label).expect("label from vocabulary"))
            .collect()
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        let p = Path::new(&entry.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn test_mask(&self, split: usize) -> Result<Vec<bool>> {
        if split >= self.split_count() {
            return Err(Error::Config(format!(
                "split {} requested but the manifest defines {}",
                split + 1,
                self.split_count()
            )));
        }
        Ok(self.entries.iter().map(|e| e.test[split]).collect())
    }

    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Manifest> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = reader
            .headers()
            .map_err(|e| Error::format(WHAT, e.to_string()))?
            .clone();
        let cols: Vec<&str> = header.iter().collect();
        if cols.len() < 3 || cols[0] != "path" || cols[1] != "label" {
            return Err(Error::format(
                WHAT,
                format!("header must be path,label,split_1,... (got {})", cols.join(",")),
            ));
        }
        let split_names: Vec<String> = cols[2..].iter().map(|s| s.to_string()).collect();
        let mut entries = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| Error::format(WHAT, format!("line {line}: {e}")))?;
            if rec.len() != cols.len() {
                return Err(Error::format(
                    WHAT,
                    format!("line {line}: {} fields, header has {}", rec.len(), cols.len()),
                ));
            }
            let test = rec
                .iter()
                .skip(2)
                .map(|v| match v {
                    "train" => Ok(false),
                    "test" => Ok(true),
                    other => Err(Error::format(
                        WHAT,
                        format!("line {line}: split value {other:?} is neither train nor test"),
                    )),
                })
                .collect::<Result<Vec<_>>>()?;
            if rec[0].is_empty() || rec[1].is_empty() {
                return Err(Error::format(WHAT, format!("line {line}: empty path or label")));
            }
            entries.push(ManifestEntry {
                path: rec[0].to_string(),
                label: rec[1].to_string(),
                test,
            });
        }
        if entries.is_empty() {
            return Err(Error::format(WHAT, "no rows"));
        }
        for (s, name) in split_names.iter().enumerate() {
            let tests = entries.iter().filter(|e| e.test[s]).count();
            if tests == 0 || tests == entries.len() {
                return Err(Error::format(WHAT, format!("split {name} has no train or no test rows")));
            }
        }
        Ok(Manifest {
            split_names,
            entries,
            base_dir: base_dir.into(),
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Manifest> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact {
                stage: "manifest",
                path: path.to_path_buf(),
            },
            _ => Error::Io(e),
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Manifest::parse(&text, base)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["path".to_string(), "label".to_string()];
        header.extend(self.split_names.iter().cloned());
        w.write_record(&header).map_err(|e| Error::format(WHAT, e.to_string()))?;
        for e in &self.entries {
            let mut rec = vec![e.path.clone(), e.label.clone()];
            rec.extend(e.test.iter().map(|&t| if t { "test" } else { "train" }.to_string()));
            w.write_record(&rec).map_err(|e| Error::format(WHAT, e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::format(WHAT, e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv()?)?;
        Ok(())
    }
}

/// Rotating hold-out: within each class, item `i` is a test item of split `s`
/// when `(i + s) % folds == 0`.
pub fn rotating_splits(index_in_class: usize, splits: usize, folds: usize) -> Vec<bool> {
    (0..splits).map(|s| (index_in_class + s) % folds == 0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = "path,label,split_1,split_2\n\
        a.wav,street,train,test\n\
        b.wav,beach,test,train\n\
        c.wav,street,test,train\n\
        /abs/d.wav,beach,train,test\n";

    #[test]
    fn parse_and_query() {
        let m = Manifest::parse(TEXT, "/data").unwrap();
        assert_eq!(m.split_count(), 2);
        assert_eq!(m.vocabulary(), vec!["beach", "street"]);
        assert_eq!(m.label_indices(), vec![1, 0, 1, 0]);
        assert_eq!(m.test_mask(0).unwrap(), vec![false, true, true, false]);
        assert_eq!(m.resolve(&m.entries[0]), PathBuf::from("/data/a.wav"));
        assert_eq!(m.resolve(&m.entries[3]), PathBuf::from("/abs/d.wav"));
        assert!(matches!(m.test_mask(2), Err(Error::Config(_))));
    }

    #[test]
    fn csv_roundtrip() {
        let m = Manifest::parse(TEXT, "/data").unwrap();
        let again = Manifest::parse(&m.to_csv().unwrap(), "/data").unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn rejects_malformed() {
        for bad in [
            "file,label,split_1\na,b,train\n",
            "path,label\na,b\n",
            "path,label,split_1\na,b,maybe\n",
            "path,label,split_1\na,b,train\nc,d,train\n",
            "path,label,split_1\n",
            "path,label,split_1\na,b\n",
        ] {
            assert!(Manifest::parse(bad, ".").is_err(), "{bad}");
        }
    }

    #[test]
    fn missing_file_names_the_stage() {
        let err = Manifest::read("/nonexistent/m.csv").unwrap_err();
        assert!(matches!(err, Error::MissingArtifact { stage: "manifest", .. }));
    }

    #[test]
    fn rotating_split_fractions() {
        let tests: usize = (0..80).map(|i| rotating_splits(i, 1, 4)[0] as usize).sum();
        assert_eq!(tests, 20);
        // every item is tested exactly once over `folds` splits
        for i in 0..8 {
            assert_eq!(rotating_splits(i, 4, 4).iter().filter(|&&t| t).count(), 1);
        }
    }
}
