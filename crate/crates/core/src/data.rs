//! Dataset ingestion, charge filtering and ten-fold splitting.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chem::{parse_smiles, write_canonical_smiles, ChemError, MolGraph};

pub const FOLDS: u8 = 10;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("no molecules survived filtering")]
    Empty,
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Tune,
    Test,
}

impl Role {
    /// Folds 0-7 train, fold 8 tunes, fold 9 tests.
    pub fn of_fold(fold: u8) -> Role {
        match fold {
            8 => Role::Tune,
            9 => Role::Test,
            _ => Role::Train,
        }
    }

    pub fn parse(s: &str) -> Option<Role> {
        match s {
            "train" => Some(Role::Train),
            "tune" => Some(Role::Tune),
            "test" => Some(Role::Test),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Tune => "tune",
            Role::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub id: String,
    pub smiles: String,
    pub canonical: String,
    pub fold: u8,
}

impl Record {
    pub fn role(&self) -> Role {
        Role::of_fold(self.fold)
    }

    pub fn graph(&self) -> MolGraph {
        parse_smiles(&self.canonical).expect("canonical SMILES re-parses")
    }
}

/// Counts of input lines by outcome.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub lines: usize,
    pub charged: usize,
    pub parse_errors: usize,
    pub duplicates: usize,
    pub too_large: usize,
    pub over_limit: usize,
    pub kept: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IngestOptions {
    pub seed: u64,
    pub max_heavy_atoms: Option<usize>,
    /// Keep at most this many molecules, chosen by the seeded shuffle.
    pub limit: Option<usize>,
}

/// Filtered molecules in shuffled order; a record's fold is its rank mod 10.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub records: Vec<Record>,
    pub report: IngestReport,
}

fn is_charge_error(e: &ChemError) -> bool {
    matches!(e, ChemError::Charge { .. })
}

/// Lines of (id, smiles). A first line of `id,smiles` switches to CSV;
/// otherwise each line is a SMILES optionally followed by whitespace and a
/// name, and ids are the 1-based line numbers.
fn read_entries(reader: impl Read) -> Result<Vec<(String, String)>, DataError> {
    let mut lines = BufReader::new(reader).lines();
    let first = match lines.next() {
        Some(l) => l?,
        None => return Ok(Vec::new()),
    };
    let header: Vec<String> = first.split(',').map(|s| s.trim().to_ascii_lowercase()).collect();
    let mut out = Vec::new();
    if header.len() >= 2 && header[0] == "id" && header[1] == "smiles" {
        let rest: Vec<String> = lines.collect::<Result<_, _>>()?;
        let body = rest.join("\n");
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(body.as_bytes());
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() >= 2 {
                out.push((rec[0].trim().to_string(), rec[1].trim().to_string()));
            }
        }
        return Ok(out);
    }
    let mut push = |n: usize, line: &str| {
        if let Some(s) = line.split_whitespace().next() {
            out.push((format!("L{n:06}"), s.to_string()));
        }
    };
    push(1, &first);
    for (k, line) in lines.enumerate() {
        push(k + 2, &line?);
    }
    Ok(out)
}

/// Parses, filters, canonicalizes, deduplicates (first occurrence wins) and
/// assigns folds by a seeded shuffle.
pub fn ingest_reader(reader: impl Read, opts: &IngestOptions) -> Result<Dataset, DataError> {
    let entries = read_entries(reader)?;
    let mut report = IngestReport {
        lines: entries.len(),
        ..IngestReport::default()
    };
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (id, smiles) in entries {
        let g = match parse_smiles(&smiles) {
            Ok(g) => g,
            Err(e) if is_charge_error(&e) => {
                report.charged += 1;
                continue;
            }
            Err(_) => {
                report.parse_errors += 1;
                continue;
            }
        };
        if opts.max_heavy_atoms.is_some_and(|m| g.heavy_atom_count() > m) {
            report.too_large += 1;
            continue;
        }
        let canonical = write_canonical_smiles(&g);
        if !seen.insert(canonical.clone()) {
            report.duplicates += 1;
            continue;
        }
        records.push(Record {
            id,
            smiles,
            canonical,
            fold: 0,
        });
    }
    records.shuffle(&mut ChaCha8Rng::seed_from_u64(opts.seed));
    if let Some(limit) = opts.limit {
        if records.len() > limit {
            report.over_limit = records.len() - limit;
            records.truncate(limit);
        }
    }
    if records.is_empty() {
        return Err(DataError::Empty);
    }
    for (rank, r) in records.iter_mut().enumerate() {
        r.fold = (rank % FOLDS as usize) as u8;
    }
    report.kept = records.len();
    Ok(Dataset { records, report })
}

pub fn ingest(path: &Path, opts: &IngestOptions) -> Result<Dataset, DataError> {
    let f = File::open(path).map_err(|source| DataError::Read {
        path: path.display().to_string(),
        source,
    })?;
    ingest_reader(f, opts)
}

#[derive(Serialize, Deserialize)]
struct ManifestRow {
    id: String,
    canonical_smiles: String,
    fold: u8,
    role: Role,
}

impl Dataset {
    pub fn split(&self, role: Role) -> Vec<&Record> {
        self.records.iter().filter(|r| r.role() == role).collect()
    }

    pub fn graphs(&self, role: Role) -> Vec<MolGraph> {
        self.split(role).into_iter().map(Record::graph).collect()
    }

    /// Manifest CSV `id,canonical_smiles,fold,role` in dataset order.
    pub fn write_manifest(&self, path: &Path) -> Result<(), DataError> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.records {
            w.serialize(ManifestRow {
                id: r.id.clone(),
                canonical_smiles: r.canonical.clone(),
                fold: r.fold,
                role: r.role(),
            })?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a manifest back. The raw SMILES column is not stored, so it is
    /// set to the canonical form.
    pub fn read_manifest(path: &Path) -> Result<Dataset, DataError> {
        let f = File::open(path).map_err(|source| DataError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let mut rdr = csv::Reader::from_reader(f);
        let mut records = Vec::new();
        for (k, row) in rdr.deserialize::<ManifestRow>().enumerate() {
            let row = row?;
            let line = k + 2;
            if row.fold >= FOLDS || Role::of_fold(row.fold) != row.role {
                return Err(DataError::Manifest {
                    line,
                    msg: format!("fold {} does not match role {}", row.fold, row.role.as_str()),
                });
            }
            parse_smiles(&row.canonical_smiles).map_err(|e| DataError::Manifest { line, msg: e.to_string() })?;
            records.push(Record {
                id: row.id,
                smiles: row.canonical_smiles.clone(),
                canonical: row.canonical_smiles,
                fold: row.fold,
            });
        }
        if records.is_empty() {
            return Err(DataError::Empty);
        }
        let report = IngestReport {
            lines: records.len(),
            kept: records.len(),
            ..IngestReport::default()
        };
        Ok(Dataset { records, report })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = "CCO\nOCC\n[NH4+]\nC1CC\nc1ccccc1\nC=O\nCC(=O)O\n[O-]C\nN#N\nCCN name\n";

    fn opts(seed: u64) -> IngestOptions {
        IngestOptions {
            seed,
            ..IngestOptions::default()
        }
    }

    #[test]
    fn drops_are_counted_by_reason() {
        let d = ingest_reader(TOY.as_bytes(), &opts(1)).unwrap();
        let r = &d.report;
        assert_eq!((r.lines, r.charged, r.parse_errors, r.duplicates, r.kept), (10, 2, 1, 1, 6));
        assert!(d.records.iter().any(|x| x.id == "L000010" && x.smiles == "CCN"));
    }

    #[test]
    fn folds_are_seeded_and_partition() {
        let a = ingest_reader(TOY.as_bytes(), &opts(7)).unwrap();
        let b = ingest_reader(TOY.as_bytes(), &opts(7)).unwrap();
        assert_eq!(a, b);
        let folds: Vec<u8> = a.records.iter().map(|r| r.fold).collect();
        assert_eq!(folds, vec![0, 1, 2, 3, 4, 5]);
        let c = ingest_reader(TOY.as_bytes(), &opts(8)).unwrap();
        let mut x: Vec<_> = a.records.iter().map(|r| r.canonical.clone()).collect();
        let mut y: Vec<_> = c.records.iter().map(|r| r.canonical.clone()).collect();
        x.sort();
        y.sort();
        assert_eq!(x, y);
    }

    #[test]
    fn csv_input_and_filters() {
        let text = "id,smiles\na,C\nb,CCCCCC\nc,CC\nd,CCC\n";
        let o = IngestOptions {
            seed: 0,
            max_heavy_atoms: Some(3),
            limit: Some(2),
        };
        let d = ingest_reader(text.as_bytes(), &o).unwrap();
        assert_eq!((d.report.too_large, d.report.over_limit, d.report.kept), (1, 1, 2));
        assert!(d.records.iter().all(|r| ["a", "c", "d"].contains(&r.id.as_str())));
    }

    #[test]
    fn manifest_round_trip() {
        let d = ingest_reader(TOY.as_bytes(), &opts(3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        d.write_manifest(&p).unwrap();
        let back = Dataset::read_manifest(&p).unwrap();
        assert_eq!(back.records.len(), d.records.len());
        for (x, y) in back.records.iter().zip(&d.records) {
            assert_eq!((&x.id, &x.canonical, x.fold), (&y.id, &y.canonical, y.fold));
        }
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("id,canonical_smiles,fold,role\n"));
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(ingest_reader("[NH4+]\n".as_bytes(), &opts(0)), Err(DataError::Empty)));
    }
}
