use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::imgproc::io::image_dimensions;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DomainTag {
    Source,
    Target,
}

impl DomainTag {
    pub fn as_str(self) -> &'static str {
        match self {
            DomainTag::Source => "source",
            DomainTag::Target => "target",
        }
    }
}

impl std::str::FromStr for DomainTag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "source" => Ok(DomainTag::Source),
            "target" => Ok(DomainTag::Target),
            other => Err(format!("unknown domain tag `{other}` (expected source or target)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleRecord {
    pub id: String,
    pub image_path: PathBuf,
    pub label_path: PathBuf,
    pub fov_path: Option<PathBuf>,
    pub dataset: String,
    pub domain: DomainTag,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DatasetExpectation {
    pub name: &'static str,
    pub count: usize,
    pub width: usize,
    pub height: usize,
    pub domain: DomainTag,
}

/// The public fundus datasets this pipeline knows about.
pub const DECLARED_DATASETS: [DatasetExpectation; 4] = [
    DatasetExpectation { name: "DRIVE", count: 20, width: 565, height: 584, domain: DomainTag::Source },
    DatasetExpectation { name: "HRF", count: 45, width: 3504, height: 2336, domain: DomainTag::Source },
    DatasetExpectation { name: "STARE", count: 20, width: 700, height: 605, domain: DomainTag::Target },
    DatasetExpectation { name: "ARIA", count: 138, width: 768, height: 576, domain: DomainTag::Target },
];

pub fn expectation(dataset: &str) -> Option<&'static DatasetExpectation> {
    DECLARED_DATASETS
        .iter()
        .find(|d| d.name.eq_ignore_ascii_case(dataset))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ManifestWarning {
    Count {
        dataset: String,
        expected: usize,
        found: usize,
    },
    Dims {
        id: String,
        dataset: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    Domain {
        id: String,
        dataset: String,
        expected: DomainTag,
    },
}

impl fmt::Display for ManifestWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ManifestWarning::Count { dataset, expected, found } => {
                write!(f, "{dataset}: {found} records, expected {expected}")
            }
            ManifestWarning::Dims { id, dataset, expected, found } => write!(
                f,
                "{id}: image is {}x{}, {dataset} images are {}x{}",
                found.0, found.1, expected.0, expected.1
            ),
            ManifestWarning::Domain { id, dataset, expected } => {
                write!(f, "{id}: {dataset} belongs to the {} domain", expected.as_str())
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct DatasetManifest {
    pub path: PathBuf,
    pub records: Vec<SampleRecord>,
    pub warnings: Vec<ManifestWarning>,
}

impl DatasetManifest {
    pub fn source(&self) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(|r| r.domain == DomainTag::Source)
    }

    pub fn target(&self) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(|r| r.domain == DomainTag::Target)
    }
}

/// Parses `id,image,label[,fov],dataset,domain_tag` lines. Relative paths
/// resolve against `base_dir`. Blank lines and `#` comments are skipped.
pub fn parse_manifest(text: &str, base_dir: &Path, manifest_path: &Path) -> Result<Vec<SampleRecord>> {
    let mut records = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Manifest {
            path: manifest_path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let (id, image, label, fov, dataset, domain) = match fields[..] {
            [id, image, label, dataset, domain] => (id, image, label, None, dataset, domain),
            [id, image, label, fov, dataset, domain] => {
                (id, image, label, (!fov.is_empty()).then_some(fov), dataset, domain)
            }
            _ => {
                return Err(err(format!(
                    "expected 5 or 6 comma-separated fields, found {}",
                    fields.len()
                )))
            }
        };
        if id.is_empty() || image.is_empty() || label.is_empty() || dataset.is_empty() {
            return Err(err("empty required field".into()));
        }
        let domain: DomainTag = domain.parse().map_err(err)?;
        let resolve = |p: &str| {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base_dir.join(p)
            }
        };
        records.push(SampleRecord {
            id: id.to_string(),
            image_path: resolve(image),
            label_path: resolve(label),
            fov_path: fov.map(resolve),
            dataset: dataset.to_string(),
            domain,
        });
    }
    Ok(records)
}

/// Loads and validates a manifest: referenced files must exist (hard error);
/// deviations from the declared dataset counts, sizes or domains are
/// collected as warnings and logged.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let records = parse_manifest(&text, base, path)?;

    let mut warnings = Vec::new();
    for r in &records {
        for (what, p) in [("image", Some(&r.image_path)), ("label", Some(&r.label_path)), ("fov", r.fov_path.as_ref())] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(Error::Record {
                        id: r.id.clone(),
                        msg: format!("{what} file {} does not exist", p.display()),
                    });
                }
            }
        }
        if let Some(exp) = expectation(&r.dataset) {
            let found = image_dimensions(&r.image_path)?;
            if found != (exp.width, exp.height) {
                warnings.push(ManifestWarning::Dims {
                    id: r.id.clone(),
                    dataset: exp.name.to_string(),
                    expected: (exp.width, exp.height),
                    found,
                });
            }
            if r.domain != exp.domain {
                warnings.push(ManifestWarning::Domain {
                    id: r.id.clone(),
                    dataset: exp.name.to_string(),
                    expected: exp.domain,
                });
            }
        }
    }
    for exp in &DECLARED_DATASETS {
        let found = records
            .iter()
            .filter(|r| r.dataset.eq_ignore_ascii_case(exp.name))
            .count();
        if found > 0 && found != exp.count {
            warnings.push(ManifestWarning::Count {
                dataset: exp.name.to_string(),
                expected: exp.count,
                found,
            });
        }
    }
    for w in &warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(DatasetManifest {
        path: path.to_path_buf(),
        records,
        warnings,
    })
}

/// Writes records with paths relative to the manifest's directory when possible.
pub fn write_manifest(path: impl AsRef<Path>, records: &[SampleRecord]) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new(""));
    let rel = |p: &Path| -> String {
        p.strip_prefix(base).unwrap_or(p).to_string_lossy().into_owned()
    };
    let mut out = String::new();
    for r in records {
        let mut fields = vec![r.id.clone(), rel(&r.image_path), rel(&r.label_path)];
        if let Some(f) = &r.fov_path {
            fields.push(rel(f));
        }
        fields.push(r.dataset.clone());
        fields.push(r.domain.as_str().to_string());
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
