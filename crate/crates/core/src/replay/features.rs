use std::collections::HashMap;

use super::{DatasetStage, ReplayDataset};
use crate::error::{invalid, Result};

pub const AGE_OF_CUSTOMER_REGISTER: &str = "age_of_customer_register";
pub const AGE_OF_VENDOR_REGISTER: &str = "age_of_vendor_register";
pub const FREQUENT_VENDOR: &str = "frequent_vendor";
pub const FREQUENT_CUSTOMER: &str = "frequent_customer";
pub const CUSTOMER_VENDOR_DISTANCE: &str = "customer_vendor_distance";

/// Median of the values, `None` when empty.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 0 { 0.5 * (v[mid - 1] + v[mid]) } else { v[mid] })
}

/// Euclidean distance between two coordinate pairs.
pub fn coordinate_distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Appends the five derived features: register ages of customer and vendor
/// (days), vendor and customer transaction counts over the training window,
/// and the customer-vendor distance. Missing inputs fall back to the
/// training median and are flagged in the report.
pub fn engineer_features(mut ds: ReplayDataset) -> Result<ReplayDataset> {
    if ds.stage != DatasetStage::Imputed {
        return Err(invalid("features were already engineered"));
    }
    let mut vendor_counts: HashMap<&str, usize> = HashMap::new();
    let mut customer_counts: HashMap<&str, usize> = HashMap::new();
    for r in &ds.training {
        *vendor_counts.entry(&r.vendor_id).or_default() += 1;
        *customer_counts.entry(&r.customer_id).or_default() += 1;
    }
    let reference = ds.reference_date;

    type Extract = fn(&super::InteractionRecord, Option<chrono::NaiveDate>) -> Option<f64>;
    let age_customer: Extract = |r, reference| {
        let at = r.raw.order_date.or(reference)?;
        Some((at - r.raw.customer_registered?).num_days() as f64)
    };
    let age_vendor: Extract = |r, reference| {
        let at = r.raw.order_date.or(reference)?;
        Some((at - r.raw.vendor_registered?).num_days() as f64)
    };
    let distance: Extract = |r, _| Some(coordinate_distance(r.raw.customer_coords?, r.raw.vendor_coords?));

    let all = |ds: &ReplayDataset, f: Extract| -> (Vec<Option<f64>>, Vec<Option<f64>>) {
        (ds.training.iter().map(|r| f(r, reference)).collect(), ds.testing.iter().map(|r| f(r, reference)).collect())
    };
    type Column<'a> = (&'a str, Vec<Option<f64>>, Vec<Option<f64>>);
    let mut derived: Vec<Column> = Vec::new();
    derived.push((
        FREQUENT_VENDOR,
        count(&ds.training, &vendor_counts, true),
        count(&ds.testing, &vendor_counts, true),
    ));
    derived.push((
        FREQUENT_CUSTOMER,
        count(&ds.training, &customer_counts, false),
        count(&ds.testing, &customer_counts, false),
    ));
    let (tr, te) = all(&ds, age_vendor);
    derived.push((AGE_OF_VENDOR_REGISTER, tr, te));
    let (tr, te) = all(&ds, age_customer);
    derived.push((AGE_OF_CUSTOMER_REGISTER, tr, te));
    let (tr, te) = all(&ds, distance);
    derived.push((CUSTOMER_VENDOR_DISTANCE, tr, te));

    for (name, train_vals, test_vals) in derived {
        let present: Vec<f64> = train_vals.iter().flatten().copied().collect();
        let missing = train_vals.iter().chain(&test_vals).filter(|v| v.is_none()).count();
        let fill = if missing > 0 {
            ds.report.imputed.insert(name.to_string(), missing);
            ds.report.flags.push(format!("{name}: {missing} missing value(s) set to the training median"));
            median(&present).unwrap_or_else(|| {
                ds.report.flags.push(format!("{name}: no training values, filled with 0"));
                0.0
            })
        } else {
            0.0
        };
        for (r, v) in ds.training.iter_mut().zip(&train_vals) {
            r.features.push(v.unwrap_or(fill));
        }
        for (r, v) in ds.testing.iter_mut().zip(&test_vals) {
            r.features.push(v.unwrap_or(fill));
        }
        ds.feature_schema.push(name.to_string());
    }
    ds.stage = DatasetStage::Engineered;
    Ok(ds)
}

fn count(records: &[super::InteractionRecord], counts: &HashMap<&str, usize>, by_vendor: bool) -> Vec<Option<f64>> {
    records
        .iter()
        .map(|r| {
            let key = if by_vendor { r.vendor_id.as_str() } else { r.customer_id.as_str() };
            Some(counts.get(key).copied().unwrap_or(0) as f64)
        })
        .collect()
}

/// Min-max scaling fitted on training and applied to both splits; test
/// values are clipped to `[0, 1]`. A constant training feature maps to 0
/// everywhere and is flagged.
pub fn scale_features(mut ds: ReplayDataset) -> Result<ReplayDataset> {
    if ds.stage == DatasetStage::Scaled {
        return Err(invalid("features were already scaled"));
    }
    if ds.training.is_empty() {
        return Err(invalid("cannot fit scaling on an empty training set"));
    }
    let p = ds.feature_schema.len();
    let mut scaling = vec![(f64::INFINITY, f64::NEG_INFINITY); p];
    for r in &ds.training {
        for (j, x) in r.features.iter().enumerate() {
            scaling[j].0 = scaling[j].0.min(*x);
            scaling[j].1 = scaling[j].1.max(*x);
        }
    }
    for (j, (lo, hi)) in scaling.iter().enumerate() {
        if hi <= lo {
            ds.report.flags.push(format!("{}: constant on training, scaled to 0", ds.feature_schema[j]));
        }
    }
    for r in ds.training.iter_mut().chain(ds.testing.iter_mut()) {
        for (x, &(lo, hi)) in r.features.iter_mut().zip(&scaling) {
            *x = scale_value(*x, lo, hi);
        }
    }
    ds.scaling = scaling;
    ds.stage = DatasetStage::Scaled;
    Ok(ds)
}

/// `(x - lo) / (hi - lo)` clipped to `[0, 1]`; 0 when `hi <= lo`.
pub fn scale_value(x: f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        0.0
    } else {
        ((x - lo) / (hi - lo)).clamp(0.0, 1.0)
    }
}
