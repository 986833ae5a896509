//! Cohort CSV files: `id,time,event,treatment,x1..xp` with a header row.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{validate_cohort, SubjectRecord};

const FIXED: [&str; 4] = ["id", "time", "event", "treatment"];

/// A cohort read from CSV together with its covariate column names.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub covariate_names: Vec<String>,
    pub records: Vec<SubjectRecord>,
}

pub fn read_cohort_csv(path: &Path) -> Result<Cohort> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_cohort(f).map_err(|e| match e {
        Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn read_cohort(reader: impl std::io::Read) -> Result<Cohort> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Data(format!("unreadable header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.len() < 4 || header[..4].iter().zip(FIXED).any(|(h, f)| h != f) {
        return Err(Error::Data(format!(
            "header must start with id,time,event,treatment; got {}",
            header.join(",")
        )));
    }
    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Data(format!("line {line}: {e}")))?;
        if row.len() != header.len() {
            return Err(Error::Data(format!("line {line}: {} fields, expected {}", row.len(), header.len())));
        }
        let num = |j: usize| -> Result<f64> {
            row[j]
                .parse::<f64>()
                .map_err(|_| Error::Data(format!("line {line}: column {} is not a number: {:?}", header[j], &row[j])))
        };
        let flag = |j: usize| -> Result<bool> {
            match &row[j] {
                "0" => Ok(false),
                "1" => Ok(true),
                v => Err(Error::Data(format!("line {line}: column {} must be 0 or 1, got {v:?}", header[j]))),
            }
        };
        let id = row[0]
            .parse::<i64>()
            .map_err(|_| Error::Data(format!("line {line}: id is not an integer: {:?}", &row[0])))?;
        let covariates = (4..row.len()).map(num).collect::<Result<Vec<_>>>()?;
        records.push(SubjectRecord::new(id, covariates, flag(3)?, num(1)?, flag(2)?).map_err(|e| match e {
            Error::Data(m) => Error::Data(format!("line {line}: {m}")),
            other => other,
        })?);
    }
    validate_cohort(&records)?;
    Ok(Cohort {
        covariate_names: header[4..].to_vec(),
        records,
    })
}

pub fn write_cohort_csv(path: &Path, cohort: &Cohort) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_cohort(f, cohort).map_err(|e| match e {
        Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_cohort(writer: impl std::io::Write, cohort: &Cohort) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::Data(format!("write failed: {e}"));
    let mut header: Vec<String> = FIXED.iter().map(|s| s.to_string()).collect();
    header.extend(cohort.covariate_names.iter().cloned());
    w.write_record(&header).map_err(err)?;
    for r in &cohort.records {
        let mut row = vec![
            r.id.to_string(),
            r.time.to_string(),
            u8::from(r.event).to_string(),
            u8::from(r.treatment).to_string(),
        ];
        row.extend(r.covariates.iter().map(|x| x.to_string()));
        w.write_record(&row).map_err(err)?;
    }
    w.flush().map_err(|e| Error::Data(format!("write failed: {e}")))?;
    Ok(())
}
