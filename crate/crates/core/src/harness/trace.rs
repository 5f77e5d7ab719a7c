//! Recorded trajectories and their CSV/JSON serialisation.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Where a recorded spherical sharpness was evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SharpnessAt {
    /// At the current direction `θₜ`.
    Theta,
    /// At its projection `Φ(θₜ)` onto the minimizer manifold.
    Phi,
}

/// One recorded step. Optional columns serialise as empty CSV fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: u64,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
    pub w_norm: f64,
    pub eff_lr: f64,
    pub two_over_eff_lr: f64,
    pub sph_sharpness: Option<f64>,
    pub sharpness_at: Option<SharpnessAt>,
    pub h: Option<f64>,
    pub u: Option<f64>,
    pub misalignment: Option<f64>,
    pub dist_to_target: Option<f64>,
}

impl TraceRow {
    pub fn new(t: u64, train_loss: f64, w_norm: f64, eff_lr: f64) -> Self {
        Self {
            t,
            train_loss,
            test_loss: None,
            w_norm,
            eff_lr,
            two_over_eff_lr: 2.0 / eff_lr,
            sph_sharpness: None,
            sharpness_at: None,
            h: None,
            u: None,
            misalignment: None,
            dist_to_target: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    /// Index of the first row with `t >= step`.
    pub fn index_at_or_after(&self, step: u64) -> Option<usize> {
        let i = self.rows.partition_point(|r| r.t < step);
        (i < self.rows.len()).then_some(i)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for row in &self.rows {
            wr.serialize(row)?;
        }
        if self.rows.is_empty() {
            wr.write_record(CSV_HEADER)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let rows = rd.deserialize().collect::<std::result::Result<Vec<TraceRow>, _>>()?;
        Ok(Self { rows })
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer(w, &self.rows)?;
        Ok(())
    }

    pub fn read_json<R: Read>(r: R) -> Result<Self> {
        Ok(Self { rows: serde_json::from_reader(r)? })
    }
}

pub const CSV_HEADER: [&str; 12] = [
    "t",
    "train_loss",
    "test_loss",
    "w_norm",
    "eff_lr",
    "two_over_eff_lr",
    "sph_sharpness",
    "sharpness_at",
    "h",
    "u",
    "misalignment",
    "dist_to_target",
];

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn finite() -> impl Strategy<Value = f64> {
        prop_oneof![-1e300f64..1e300, -1.0f64..1.0, Just(0.0), Just(1e-320)]
    }

    fn opt() -> impl Strategy<Value = Option<f64>> {
        proptest::option::of(finite())
    }

    prop_compose! {
        fn row()(t in 0u64..1_000_000, a in finite(), b in opt(), c in finite(), d in finite(),
                 e in opt(), f in proptest::option::of(prop_oneof![Just(SharpnessAt::Theta), Just(SharpnessAt::Phi)]),
                 g in opt(), h in opt(), i in opt(), j in opt(), k in finite()) -> TraceRow {
            TraceRow { t, train_loss: a, test_loss: b, w_norm: c, eff_lr: d, two_over_eff_lr: k,
                       sph_sharpness: e, sharpness_at: f, h: g, u: h, misalignment: i, dist_to_target: j }
        }
    }

    proptest! {
        #[test]
        fn csv_roundtrip(rows in proptest::collection::vec(row(), 0..20)) {
            let tr = Trace { rows };
            let s = tr.to_csv_string().unwrap();
            let back = Trace::read_csv(s.as_bytes()).unwrap();
            prop_assert_eq!(back, tr);
        }

        #[test]
        fn json_roundtrip(rows in proptest::collection::vec(row(), 0..20)) {
            let tr = Trace { rows };
            let mut buf = Vec::new();
            tr.write_json(&mut buf).unwrap();
            prop_assert_eq!(Trace::read_json(buf.as_slice()).unwrap(), tr);
        }
    }

    #[test]
    fn header_has_exact_columns() {
        let tr = Trace { rows: vec![TraceRow::new(0, 1.0, 1.0, 0.5)] };
        let s = tr.to_csv_string().unwrap();
        assert_eq!(s.lines().next().unwrap(), CSV_HEADER.join(","));
        assert!(s.lines().nth(1).unwrap().starts_with("0,1.0,,1.0,0.5,4.0,,,"));
        let empty = Trace::default().to_csv_string().unwrap();
        assert_eq!(empty.trim_end(), CSV_HEADER.join(","));
    }

    #[test]
    fn index_lookup() {
        let tr = Trace { rows: (0..5).map(|t| TraceRow::new(t * 10, 0.0, 1.0, 1.0)).collect() };
        assert_eq!(tr.index_at_or_after(15), Some(2));
        assert_eq!(tr.index_at_or_after(40), Some(4));
        assert_eq!(tr.index_at_or_after(41), None);
    }
}
