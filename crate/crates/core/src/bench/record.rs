use serde::{Deserialize, Serialize};

/// Where a row of the evaluation table came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    #[default]
    Initial,
    Med,
    Ei,
    Validation,
    Uniform,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Initial => "initial",
            Source::Med => "med",
            Source::Ei => "ei",
            Source::Validation => "validation",
            Source::Uniform => "uniform",
        }
    }
}

/// One row of the raw data table: inputs, feasibility, responses and loss.
///
/// `y` and `loss` are present exactly when `z` is true.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub x: Vec<f64>,
    pub z: bool,
    pub y: Option<Vec<f64>>,
    pub loss: Option<f64>,
    #[serde(default)]
    pub source: Source,
}

impl EvaluationRecord {
    pub fn feasible(x: Vec<f64>, y: Vec<f64>, loss: f64) -> Self {
        Self { x, z: true, y: Some(y), loss: Some(loss), source: Source::Initial }
    }

    pub fn infeasible(x: Vec<f64>) -> Self {
        Self { x, z: false, y: None, loss: None, source: Source::Initial }
    }

    pub fn with_source(mut self, source: Source) -> Self {
        self.source = source;
        self
    }

    pub fn is_consistent(&self) -> bool {
        self.z == self.y.is_some() && self.z == self.loss.is_some()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluationTable {
    pub records: Vec<EvaluationRecord>,
}

impl EvaluationTable {
    pub fn new(records: Vec<EvaluationRecord>) -> Self {
        Self { records }
    }

    pub fn push(&mut self, r: EvaluationRecord) {
        self.records.push(r);
    }

    pub fn extend(&mut self, rs: impl IntoIterator<Item = EvaluationRecord>) {
        self.records.extend(rs);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_feasible(&self) -> usize {
        self.records.iter().filter(|r| r.z).count()
    }

    pub fn n_infeasible(&self) -> usize {
        self.len() - self.n_feasible()
    }

    pub fn feasible_losses(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.loss).collect()
    }

    pub fn inputs(&self) -> Vec<Vec<f64>> {
        self.records.iter().map(|r| r.x.clone()).collect()
    }

    pub fn flags(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.z).collect()
    }

    /// Inputs and responses of the feasible rows.
    pub fn feasible_xy(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        self.records
            .iter()
            .filter_map(|r| r.y.as_ref().map(|y| (r.x.clone(), y.clone())))
            .unzip()
    }

    /// Writes `source,z,x1..xp,y1..yq,loss`; missing values are empty fields.
    pub fn write_csv<W: std::io::Write>(&self, w: W, p: usize, q: usize) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["source".to_string(), "z".to_string()];
        header.extend((1..=p).map(|i| format!("x{i}")));
        header.extend((1..=q).map(|j| format!("y{j}")));
        header.push("loss".into());
        out.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.source.as_str().to_string(), u8::from(r.z).to_string()];
            row.extend(r.x.iter().map(f64::to_string));
            match &r.y {
                Some(y) => row.extend(y.iter().map(f64::to_string)),
                None => row.extend(std::iter::repeat_n(String::new(), q)),
            }
            row.push(r.loss.map(|l| l.to_string()).unwrap_or_default());
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}
