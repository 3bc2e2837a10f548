//! On-disk dataset archive.
//!
//! A directory holding tab-separated text files:
//!
//! | file             | line format                       |
//! |------------------|-----------------------------------|
//! | `meta.tsv`       | `num_users\t<m>` / `num_items\t<n>` |
//! | `train.tsv`      | `user\titem`                      |
//! | `valid.tsv`      | `user\titem`                      |
//! | `test.tsv`       | `user\titem`                      |
//! | `popularity.tsv` | `item\tcount` for every item      |
//! | `users.tsv`      | `index\traw_id`                   |
//! | `items.tsv`      | `index\traw_id`                   |
//!
//! Rows are written in ascending `(user, item)` order so identical datasets
//! serialize to identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{compute_popularity, InteractionDataset};
use crate::error::{Error, Result};

fn write(dir: &Path, name: &str, body: String) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, body).map_err(|e| Error::io(path, e))
}

fn read(dir: &Path, name: &str) -> Result<(std::path::PathBuf, String)> {
    let path = dir.join(name);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok((path, text))
}

fn rows(dir: &Path, name: &str) -> Result<Vec<(String, String)>> {
    let (path, text) = read(dir, name)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(n, l)| {
            l.split_once('\t')
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .ok_or_else(|| Error::Parse {
                    path: path.clone(),
                    line: n + 1,
                    message: "expected two tab-separated fields".into(),
                })
        })
        .collect()
}

fn parse_index(name: &str, line: usize, s: &str, bound: usize) -> Result<u32> {
    match s.parse::<u32>() {
        Ok(v) if (v as usize) < bound => Ok(v),
        _ => Err(Error::Parse {
            path: name.into(),
            line,
            message: format!("index {s:?} not in [0, {bound})"),
        }),
    }
}

fn split_body(split: &[Vec<u32>]) -> String {
    let mut s = String::new();
    for (u, items) in split.iter().enumerate() {
        for i in items {
            let _ = writeln!(s, "{u}\t{i}");
        }
    }
    s
}

impl InteractionDataset {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write(
            dir,
            "meta.tsv",
            format!(
                "num_users\t{}\nnum_items\t{}\n",
                self.num_users, self.num_items
            ),
        )?;
        write(dir, "train.tsv", split_body(&self.train))?;
        write(dir, "valid.tsv", split_body(&self.valid))?;
        write(dir, "test.tsv", split_body(&self.test))?;
        let mut pop = String::new();
        for (i, z) in self.popularity.iter().enumerate() {
            let _ = writeln!(pop, "{i}\t{z}");
        }
        write(dir, "popularity.tsv", pop)?;
        let ids = |v: &[String]| {
            let mut s = String::new();
            for (k, id) in v.iter().enumerate() {
                let _ = writeln!(s, "{k}\t{id}");
            }
            s
        };
        write(dir, "users.tsv", ids(&self.user_ids))?;
        write(dir, "items.tsv", ids(&self.item_ids))
    }

    /// Loads an archive and checks that stored popularity matches the
    /// training split.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta = rows(dir, "meta.tsv")?;
        let get = |key: &str| -> Result<usize> {
            meta.iter()
                .find(|(k, _)| k == key)
                .and_then(|(_, v)| v.parse().ok())
                .ok_or_else(|| Error::Parse {
                    path: dir.join("meta.tsv"),
                    line: 0,
                    message: format!("missing or invalid {key}"),
                })
        };
        let m = get("num_users")?;
        let n = get("num_items")?;

        let load_split = |name: &str| -> Result<Vec<Vec<u32>>> {
            let mut out = vec![Vec::new(); m];
            for (line, (u, i)) in rows(dir, name)?.iter().enumerate() {
                let u = parse_index(name, line + 1, u, m)?;
                let i = parse_index(name, line + 1, i, n)?;
                out[u as usize].push(i);
            }
            for items in &mut out {
                items.sort_unstable();
            }
            Ok(out)
        };
        let train = load_split("train.tsv")?;
        let valid = load_split("valid.tsv")?;
        let test = load_split("test.tsv")?;

        let mut popularity = vec![0u32; n];
        for (line, (i, z)) in rows(dir, "popularity.tsv")?.iter().enumerate() {
            let i = parse_index("popularity.tsv", line + 1, i, n)?;
            popularity[i as usize] = z.parse().map_err(|_| Error::Parse {
                path: dir.join("popularity.tsv"),
                line: line + 1,
                message: format!("bad count {z:?}"),
            })?;
        }
        if popularity != compute_popularity(n, &train) {
            return Err(Error::InvalidArgument(format!(
                "{}: stored popularity disagrees with train.tsv",
                dir.display()
            )));
        }

        let load_ids = |name: &str, bound: usize| -> Result<Vec<String>> {
            let mut ids = vec![String::new(); bound];
            for (line, (k, id)) in rows(dir, name)?.into_iter().enumerate() {
                let k = parse_index(name, line + 1, &k, bound)?;
                ids[k as usize] = id;
            }
            Ok(ids)
        };
        let ds = InteractionDataset {
            num_users: m,
            num_items: n,
            train,
            valid,
            test,
            popularity,
            user_ids: load_ids("users.tsv", m)?,
            item_ids: load_ids("items.tsv", n)?,
        };
        ds.validate()?;
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use crate::dataset::{split_per_user, InteractionLog};

    #[test]
    fn archive_round_trips_bytes_and_values() {
        let pairs: Vec<(u32, u32)> = (0..4u32)
            .flat_map(|u| (0..12u32).map(move |k| (u, (u * 3 + k * 5) % 17)))
            .collect();
        let log = InteractionLog::from_pairs(4, 17, &pairs).unwrap();
        let ds = split_per_user(&log, 0.2, 0.1, 5).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        ds.save(a.path()).unwrap();
        let back = super::InteractionDataset::load(a.path()).unwrap();
        assert_eq!(back, ds);
        back.save(b.path()).unwrap();
        for f in [
            "meta.tsv",
            "train.tsv",
            "valid.tsv",
            "test.tsv",
            "popularity.tsv",
            "users.tsv",
            "items.tsv",
        ] {
            assert_eq!(
                std::fs::read(a.path().join(f)).unwrap(),
                std::fs::read(b.path().join(f)).unwrap(),
                "{f}"
            );
        }
    }

    #[test]
    fn tampered_popularity_is_rejected() {
        let log = InteractionLog::from_pairs(2, 3, &[(0, 0), (0, 1), (1, 0), (1, 2)]).unwrap();
        let ds = split_per_user(&log, 0.4, 0.0, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        std::fs::write(dir.path().join("popularity.tsv"), "0\t9\n1\t0\n2\t0\n").unwrap();
        assert!(super::InteractionDataset::load(dir.path()).is_err());
    }
}
