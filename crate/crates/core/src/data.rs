//! Labeled client-group records and their CSV form.
//!
//! Internally groups are `0`/`1`, clients `0..K` and classes `0..N`. The CSV
//! boundary is the only place where clients and classes are 1-based.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// One individual: features, protected group, owning client and class label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub features: Vec<f64>,
    pub group: usize,
    pub client: usize,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientGroupDataset {
    dim: usize,
    num_classes: usize,
    num_clients: usize,
    features: Vec<f64>,
    groups: Vec<usize>,
    clients: Vec<usize>,
    labels: Vec<usize>,
}

impl ClientGroupDataset {
    pub fn empty(dim: usize, num_classes: usize, num_clients: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Input("feature dimension must be at least 1".into()));
        }
        if num_classes < 2 {
            return Err(Error::Input("need at least two classes".into()));
        }
        if num_clients == 0 {
            return Err(Error::Input("need at least one client".into()));
        }
        Ok(Self {
            dim,
            num_classes,
            num_clients,
            features: Vec::new(),
            groups: Vec::new(),
            clients: Vec::new(),
            labels: Vec::new(),
        })
    }

    /// Builds a dataset and checks that every client owns a record.
    pub fn from_records(
        records: impl IntoIterator<Item = Record>,
        dim: usize,
        num_classes: usize,
        num_clients: usize,
    ) -> Result<Self> {
        let mut data = Self::empty(dim, num_classes, num_clients)?;
        for r in records {
            data.push(r)?;
        }
        data.check_clients_nonempty()?;
        Ok(data)
    }

    pub fn push(&mut self, r: Record) -> Result<()> {
        if r.features.len() != self.dim {
            return Err(Error::Input(format!(
                "record has {} features, expected {}",
                r.features.len(),
                self.dim
            )));
        }
        if r.group > 1 {
            return Err(Error::Input(format!("group {} is not 0 or 1", r.group)));
        }
        if r.client >= self.num_clients {
            return Err(Error::Input(format!(
                "client index {} out of range for {} clients",
                r.client, self.num_clients
            )));
        }
        if r.label >= self.num_classes {
            return Err(Error::Input(format!(
                "class index {} out of range for {} classes",
                r.label, self.num_classes
            )));
        }
        if r.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite feature value".into()));
        }
        self.features.extend_from_slice(&r.features);
        self.groups.push(r.group);
        self.clients.push(r.client);
        self.labels.push(r.label);
        Ok(())
    }

    pub fn check_clients_nonempty(&self) -> Result<()> {
        let counts = self.client_counts();
        match counts.iter().position(|&n| n == 0) {
            Some(c) => Err(Error::EmptyClient { client: c }),
            None => Ok(()),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_clients(&self) -> usize {
        self.num_clients
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn group(&self, i: usize) -> usize {
        self.groups[i]
    }

    pub fn client(&self, i: usize) -> usize {
        self.clients[i]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn record(&self, i: usize) -> Record {
        Record {
            features: self.features(i).to_vec(),
            group: self.groups[i],
            client: self.clients[i],
            label: self.labels[i],
        }
    }

    pub fn records(&self) -> impl Iterator<Item = Record> + '_ {
        (0..self.len()).map(|i| self.record(i))
    }

    pub fn client_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_clients];
        for &c in &self.clients {
            counts[c] += 1;
        }
        counts
    }

    pub fn client_indices(&self, client: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.clients[i] == client)
            .collect()
    }

    /// Records at `indices`, in the given order, with the same shape metadata.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut out = Self {
            dim: self.dim,
            num_classes: self.num_classes,
            num_clients: self.num_clients,
            features: Vec::with_capacity(indices.len() * self.dim),
            groups: Vec::with_capacity(indices.len()),
            clients: Vec::with_capacity(indices.len()),
            labels: Vec::with_capacity(indices.len()),
        };
        for &i in indices {
            out.features.extend_from_slice(self.features(i));
            out.groups.push(self.groups[i]);
            out.clients.push(self.clients[i]);
            out.labels.push(self.labels[i]);
        }
        out
    }

    pub fn client_slice(&self, client: usize) -> Self {
        self.subset(&self.client_indices(client))
    }

    /// Raises the declared class count, e.g. to match a model trained on more classes.
    pub fn with_num_classes(mut self, num_classes: usize) -> Result<Self> {
        if num_classes < self.num_classes {
            return Err(Error::Input(format!(
                "data has {} classes, cannot shrink to {}",
                self.num_classes, num_classes
            )));
        }
        self.num_classes = num_classes;
        Ok(self)
    }

    pub fn with_num_clients(mut self, num_clients: usize) -> Result<Self> {
        if num_clients < self.num_clients {
            return Err(Error::Input(format!(
                "data has {} clients, cannot shrink to {}",
                self.num_clients, num_clients
            )));
        }
        self.num_clients = num_clients;
        Ok(self)
    }

    /// Parses `f0,...,f{d-1},a,c,y` CSV. Clients and classes are 1-based in
    /// the file; the class and client counts are the largest ids seen.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| Error::Csv {
                line: 1,
                message: e.to_string(),
            })?
            .clone();
        let col = |name: &str| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let (ia, ic, iy) = (col("a")?, col("c")?, col("y")?);
        let feature_cols: Vec<usize> = (0..header.len())
            .filter(|&i| i != ia && i != ic && i != iy)
            .collect();
        if feature_cols.is_empty() {
            return Err(Error::Input("dataset has no feature columns".into()));
        }

        let mut rows = Vec::new();
        let (mut max_c, mut max_y) = (0usize, 0usize);
        for result in rdr.records() {
            let rec = result.map_err(|e| Error::Csv {
                line: e.position().map(|p| p.line()).unwrap_or(0),
                message: e.to_string(),
            })?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let bad = |message: String| Error::Csv { line, message };
            let field = |i: usize| rec.get(i).unwrap_or("");
            let features = feature_cols
                .iter()
                .map(|&i| {
                    field(i)
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| bad(format!("bad feature value `{}`", field(i))))
                })
                .collect::<Result<Vec<f64>>>()?;
            let int = |i: usize, name: &str| {
                field(i)
                    .parse::<usize>()
                    .map_err(|_| bad(format!("bad `{name}` value `{}`", field(i))))
            };
            let a = int(ia, "a")?;
            let c = int(ic, "c")?;
            let y = int(iy, "y")?;
            if a > 1 {
                return Err(bad(format!("group `a` must be 0 or 1, got {a}")));
            }
            if c == 0 {
                return Err(bad("client ids start at 1".into()));
            }
            if y == 0 {
                return Err(bad("class labels start at 1".into()));
            }
            max_c = max_c.max(c);
            max_y = max_y.max(y);
            rows.push(Record {
                features,
                group: a,
                client: c - 1,
                label: y - 1,
            });
        }
        if rows.is_empty() {
            return Err(Error::Input("dataset has no records".into()));
        }
        Self::from_records(rows, feature_cols.len(), max_y.max(2), max_c)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = std::io::BufWriter::new(writer);
        let mut header: Vec<String> = (0..self.dim).map(|j| format!("f{j}")).collect();
        header.extend(["a", "c", "y"].map(String::from));
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.len() {
            for v in self.features(i) {
                write!(w, "{v},")?;
            }
            writeln!(
                w,
                "{},{},{}",
                self.groups[i],
                self.clients[i] + 1,
                self.labels[i] + 1
            )?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Per-client stratified split into (train, validation, test).
///
/// Each client's records are shuffled with a stream derived from `rng`, cut
/// by largest-remainder rounding of `fractions`, and each part keeps the
/// original record order.
pub fn split_dataset(
    data: &ClientGroupDataset,
    fractions: [f64; 3],
    rng: &RngStream,
) -> Result<(ClientGroupDataset, ClientGroupDataset, ClientGroupDataset)> {
    if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) {
        return Err(Error::Input(format!(
            "split fractions must be nonnegative, got {fractions:?}"
        )));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Input(format!(
            "split fractions must sum to 1, got {total}"
        )));
    }
    let parts = fractions.iter().filter(|f| **f > 0.0).count();

    let mut buckets: [Vec<usize>; 3] = Default::default();
    for c in 0..data.num_clients() {
        let mut idx = data.client_indices(c);
        if idx.len() < parts {
            return Err(Error::ClientTooSmall {
                client: c + 1,
                records: idx.len(),
                parts,
            });
        }
        rng.derive(format!("client{c}")).shuffle(&mut idx);
        let counts = part_sizes(idx.len(), &fractions);
        let mut start = 0;
        for (bucket, n) in buckets.iter_mut().zip(counts) {
            bucket.extend_from_slice(&idx[start..start + n]);
            start += n;
        }
    }
    let [mut a, mut b, mut c] = buckets;
    a.sort_unstable();
    b.sort_unstable();
    c.sort_unstable();
    Ok((data.subset(&a), data.subset(&b), data.subset(&c)))
}

fn part_sizes(n: usize, fractions: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut sizes = [0usize; 3];
    for (s, e) in sizes.iter_mut().zip(&exact) {
        *s = e.floor() as usize;
    }
    let mut remaining = n - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&i, &j| {
        let ri = exact[i] - exact[i].floor();
        let rj = exact[j] - exact[j].floor();
        rj.partial_cmp(&ri).unwrap().then(i.cmp(&j))
    });
    for &i in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        if fractions[i] > 0.0 {
            sizes[i] += 1;
            remaining -= 1;
        }
    }
    sizes
}
