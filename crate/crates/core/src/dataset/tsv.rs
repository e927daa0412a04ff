use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::*;

const USERS_HEADER: &str = "id\tcareer_level\tdiscipline_id\tindustry_id\tcountry\tregion\texp_n_entries_class\texp_years\texp_in_current\tjob_roles\tfield_of_studies";
const ITEMS_HEADER: &str = "id\tcareer_level\tdiscipline_id\tcountry\tregion\temployment\tlatitude\tlongitude\tcreated_at\ttitle\ttags\tactive";
const INTERACTIONS_HEADER: &str = "user_id\titem_id\tinteraction_type\tweek";
const IMPRESSIONS_HEADER: &str = "user_id\tweek\titems";

struct Rows<'a> {
    file: &'static str,
    lines: Vec<(usize, Vec<&'a str>)>,
}

impl<'a> Rows<'a> {
    fn parse(file: &'static str, text: &'a str, header: Option<&str>, width: usize) -> Result<Self> {
        let mut lines = Vec::new();
        let mut it = text.lines().enumerate();
        if let Some(header) = header {
            match it.next() {
                Some((_, h)) if h.trim_end_matches('\r') == header => {}
                Some((_, h)) => {
                    return Err(Error::Parse { file: file.into(), line: 1, msg: format!("unexpected header {h:?}") })
                }
                None => return Err(Error::Parse { file: file.into(), line: 1, msg: "missing header".into() }),
            }
        }
        for (n, line) in it {
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != width {
                return Err(Error::Parse {
                    file: file.into(),
                    line: n + 1,
                    msg: format!("expected {width} columns, found {}", cols.len()),
                });
            }
            lines.push((n + 1, cols));
        }
        Ok(Self { file, lines })
    }

    fn err(&self, line: usize, msg: String) -> Error {
        Error::Parse { file: self.file.into(), line, msg }
    }

    fn num<T: FromStr>(&self, line: usize, field: &str, s: &str) -> Result<T> {
        s.parse().map_err(|_| self.err(line, format!("bad {field} value {s:?}")))
    }

    fn opt_f64(&self, line: usize, field: &str, s: &str) -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            self.num(line, field, s).map(Some)
        }
    }

    fn list<T: FromStr>(&self, line: usize, field: &str, s: &str) -> Result<Vec<T>> {
        if s.is_empty() {
            return Ok(Vec::new());
        }
        s.split(',').map(|t| self.num(line, field, t)).collect()
    }
}

fn read(dir: &Path, name: &str) -> Result<String> {
    let path = dir.join(name);
    fs::read_to_string(&path).map_err(|e| Error::io(path, e))
}

/// Loads the five TSV tables from `dir`.
pub fn load_bundle(dir: impl AsRef<Path>) -> Result<DatasetBundle> {
    let dir = dir.as_ref();

    let text = read(dir, "users.tsv")?;
    let rows = Rows::parse("users.tsv", &text, Some(USERS_HEADER), 11)?;
    let mut users = Vec::with_capacity(rows.lines.len());
    for (n, c) in &rows.lines {
        let mut categorical = [0u32; 8];
        for (k, slot) in categorical.iter_mut().enumerate() {
            *slot = rows.num(*n, USER_CATEGORICAL[k], c[k + 1])?;
        }
        users.push(User {
            id: UserId(rows.num(*n, "id", c[0])?),
            categorical,
            job_roles: rows.list(*n, "job_roles", c[9])?,
            field_of_studies: rows.list(*n, "field_of_studies", c[10])?,
        });
    }

    let text = read(dir, "items.tsv")?;
    let rows = Rows::parse("items.tsv", &text, Some(ITEMS_HEADER), 12)?;
    let mut items = Vec::with_capacity(rows.lines.len());
    for (n, c) in &rows.lines {
        let mut categorical = [0u32; 5];
        for (k, slot) in categorical.iter_mut().enumerate() {
            *slot = rows.num(*n, ITEM_CATEGORICAL[k], c[k + 1])?;
        }
        let active = match c[11] {
            "0" => false,
            "1" => true,
            other => return Err(rows.err(*n, format!("bad active value {other:?}"))),
        };
        items.push(Item {
            id: ItemId(rows.num(*n, "id", c[0])?),
            categorical,
            latitude: rows.opt_f64(*n, "latitude", c[6])?,
            longitude: rows.opt_f64(*n, "longitude", c[7])?,
            created_at: rows.num(*n, "created_at", c[8])?,
            title: rows.list(*n, "title", c[9])?,
            tags: rows.list(*n, "tags", c[10])?,
            active,
        });
    }

    let text = read(dir, "interactions.tsv")?;
    let rows = Rows::parse("interactions.tsv", &text, Some(INTERACTIONS_HEADER), 4)?;
    let mut interactions = Vec::with_capacity(rows.lines.len());
    for (n, c) in &rows.lines {
        let code: u8 = rows.num(*n, "interaction_type", c[2])?;
        let kind = InteractionKind::from_code(code)
            .ok_or_else(|| rows.err(*n, format!("unknown interaction_type {code}")))?;
        interactions.push(Interaction {
            user: UserId(rows.num(*n, "user_id", c[0])?),
            item: ItemId(rows.num(*n, "item_id", c[1])?),
            kind,
            week: rows.num(*n, "week", c[3])?,
        });
    }

    let text = read(dir, "impressions.tsv")?;
    let rows = Rows::parse("impressions.tsv", &text, Some(IMPRESSIONS_HEADER), 3)?;
    let mut impressions = Vec::with_capacity(rows.lines.len());
    for (n, c) in &rows.lines {
        let items: Vec<u64> = rows.list(*n, "items", c[2])?;
        if items.is_empty() {
            return Err(rows.err(*n, "empty impression list".into()));
        }
        impressions.push(ImpressionRecord {
            user: UserId(rows.num(*n, "user_id", c[0])?),
            week: rows.num(*n, "week", c[1])?,
            items: items.into_iter().map(ItemId).collect(),
        });
    }

    let text = read(dir, "target_users.tsv")?;
    let rows = Rows::parse("target_users.tsv", &text, None, 1)?;
    let mut targets = Vec::with_capacity(rows.lines.len());
    for (n, c) in &rows.lines {
        targets.push(UserId(rows.num(*n, "user_id", c[0])?));
    }

    DatasetBundle::new(users, items, interactions, impressions, targets)
}

fn join<T: std::fmt::Display>(xs: &[T]) -> String {
    let mut s = String::new();
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{x}");
    }
    s
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write(dir: &Path, name: &str, body: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, body).map_err(|e| Error::io(path, e))
}

/// Writes the five TSV tables into `dir` (created if missing).
pub fn save_bundle(bundle: &DatasetBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut s = String::from(USERS_HEADER);
    s.push('\n');
    for u in bundle.users() {
        let _ = write!(s, "{}", u.id);
        for v in u.categorical {
            let _ = write!(s, "\t{v}");
        }
        let _ = writeln!(s, "\t{}\t{}", join(&u.job_roles), join(&u.field_of_studies));
    }
    write(dir, "users.tsv", &s)?;

    let mut s = String::from(ITEMS_HEADER);
    s.push('\n');
    for it in bundle.items() {
        let _ = write!(s, "{}", it.id);
        for v in it.categorical {
            let _ = write!(s, "\t{v}");
        }
        let _ = writeln!(
            s,
            "\t{}\t{}\t{}\t{}\t{}\t{}",
            opt(it.latitude),
            opt(it.longitude),
            it.created_at,
            join(&it.title),
            join(&it.tags),
            u8::from(it.active)
        );
    }
    write(dir, "items.tsv", &s)?;

    let mut s = String::from(INTERACTIONS_HEADER);
    s.push('\n');
    for x in bundle.interactions() {
        let _ = writeln!(s, "{}\t{}\t{}\t{}", x.user, x.item, x.kind.code(), x.week);
    }
    write(dir, "interactions.tsv", &s)?;

    let mut s = String::from(IMPRESSIONS_HEADER);
    s.push('\n');
    for r in bundle.impressions() {
        let _ = writeln!(s, "{}\t{}\t{}", r.user, r.week, join(&r.items));
    }
    write(dir, "impressions.tsv", &s)?;

    let mut s = String::new();
    for u in bundle.target_users() {
        let _ = writeln!(s, "{u}");
    }
    write(dir, "target_users.tsv", &s)
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::small_bundle;
    use super::*;

    #[test]
    fn fixture_round_trips_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let b = small_bundle();
        save_bundle(&b, dir.path()).unwrap();
        let loaded = load_bundle(dir.path()).unwrap();
        assert_eq!(loaded, b);
        assert_eq!(loaded.users().len(), 3);

        let first = fs::read(dir.path().join("items.tsv")).unwrap();
        save_bundle(&loaded, dir.path()).unwrap();
        assert_eq!(fs::read(dir.path().join("items.tsv")).unwrap(), first);
    }

    #[test]
    fn malformed_row_reports_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        save_bundle(&small_bundle(), dir.path()).unwrap();
        let path = dir.path().join("interactions.tsv");
        let mut text = fs::read_to_string(&path).unwrap();
        text.push_str("1\t10\tclick\t2\n");
        fs::write(&path, text).unwrap();
        match load_bundle(dir.path()).unwrap_err() {
            Error::Parse { file, line, .. } => {
                assert_eq!(file, "interactions.tsv");
                assert_eq!(line, 9);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn dangling_reference_in_file_is_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        save_bundle(&small_bundle(), dir.path()).unwrap();
        let path = dir.path().join("interactions.tsv");
        let mut text = fs::read_to_string(&path).unwrap();
        text.push_str("1\t999\t1\t2\n");
        fs::write(&path, text).unwrap();
        assert!(matches!(load_bundle(dir.path()).unwrap_err(), Error::Integrity { .. }));
    }

    #[test]
    fn missing_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_bundle(dir.path()).unwrap_err(), Error::Io { .. }));
    }
}
