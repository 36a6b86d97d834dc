//! Result rows, rendered as CSV or an aligned text table.

use std::io::Write;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Format {
    Csv,
    #[default]
    Table,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "table" => Ok(Format::Table),
            _ => Err(format!("unknown format {s:?} (csv|table)")),
        }
    }
}

/// One measured configuration. Every row names the seed, variant, engine
/// and dataset size it came from.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Row {
    pub experiment: String,
    pub variant: String,
    pub engine: String,
    pub keys: u64,
    pub dataset_bytes: u64,
    pub load_factor: f64,
    pub sqr: f64,
    pub distribution: String,
    pub seed: u64,
    pub mops: Option<f64>,
    pub apcl: Option<f64>,
    pub reps: usize,
    /// Free-form: group size, latency, counts.
    pub note: String,
}

const HEADERS: [&str; 13] = [
    "experiment",
    "variant",
    "engine",
    "keys",
    "dataset_bytes",
    "load_factor",
    "sqr",
    "distribution",
    "seed",
    "mops",
    "apcl",
    "reps",
    "note",
];

impl Row {
    fn fields(&self) -> [String; 13] {
        let opt = |v: Option<f64>, p: usize| v.map_or(String::new(), |x| format!("{x:.p$}"));
        [
            self.experiment.clone(),
            self.variant.clone(),
            self.engine.clone(),
            self.keys.to_string(),
            self.dataset_bytes.to_string(),
            format!("{:.2}", self.load_factor),
            format!("{:.2}", self.sqr),
            self.distribution.clone(),
            self.seed.to_string(),
            opt(self.mops, 2),
            opt(self.apcl, 3),
            self.reps.to_string(),
            self.note.clone(),
        ]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunReport {
    pub rows: Vec<Row>,
}

impl RunReport {
    pub fn push(&mut self, row: Row) {
        self.rows.push(row);
    }

    pub fn find(&self, variant: &str, engine: &str) -> Option<&Row> {
        self.rows.iter().find(|r| r.variant == variant && r.engine == engine)
    }

    pub fn write_csv(&self, out: impl Write) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(HEADERS)?;
        for r in &self.rows {
            w.write_record(r.fields())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_table(&self) -> String {
        let cells: Vec<[String; 13]> = self.rows.iter().map(Row::fields).collect();
        let mut widths = HEADERS.map(str::len);
        for c in &cells {
            for (w, f) in widths.iter_mut().zip(c) {
                *w = (*w).max(f.len());
            }
        }
        let line = |fields: &[String]| {
            let mut s = String::new();
            for (i, (f, w)) in fields.iter().zip(widths).enumerate() {
                if i > 0 {
                    s.push_str("  ");
                }
                s.push_str(&format!("{f:<w$}"));
            }
            s.trim_end().to_owned() + "\n"
        };
        let mut out = line(&HEADERS.map(String::from));
        for c in &cells {
            out.push_str(&line(c));
        }
        out
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Table => self.to_table(),
            Format::Csv => {
                let mut buf = Vec::new();
                self.write_csv(&mut buf).expect("writing to memory");
                String::from_utf8(buf).expect("csv is UTF-8")
            }
        }
    }
}
