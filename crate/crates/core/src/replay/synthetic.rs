//! Synthetic interaction logs with the marginal statistics of the original
//! food-delivery data, written in the [`ReplaySchema::default`] layout.
//!
//! Vendor attributes (rating, preparation time, serving distance, delivery
//! charge, registration date, location) are fixed per vendor, so the
//! features carry information about which vendor was chosen. Each customer
//! has a favourite vendor and orders from it with probability `loyalty`,
//! otherwise uniformly.

use std::io::Write;
use std::path::Path;

use chrono::{Days, NaiveDate};
use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use super::ReplaySchema;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub n_rows: usize,
    pub n_vendors: usize,
    pub n_customers: usize,
    /// Probability that a customer orders from their favourite vendor.
    pub loyalty: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { n_rows: 16_043, n_vendors: 8, n_customers: 3_500, loyalty: 0.9, seed: 0 }
    }
}

/// Target `(mean, std, min, max)` of the original features.
pub const TABLE_STATS: [(&str, f64, f64, f64, f64); 10] = [
    ("item_count", 2.23, 1.99, 1.0, 38.0),
    ("grand_total", 12.09, 9.45, 0.0, 131.0),
    ("payment_mode", 1.35, 0.76, 1.0, 5.0),
    ("driver_rating", 0.56, 1.51, 0.0, 5.0),
    ("delivery_distance", 3.70, 4.02, 0.0, 14.97),
    ("gender", 0.90, 0.30, 0.0, 1.0),
    ("delivery_charge", 0.40, 0.35, 0.0, 0.7),
    ("serving_distance", 14.13, 2.82, 5.0, 15.0),
    ("preparation_time", 14.04, 2.25, 10.0, 20.0),
    ("vendor_rating", 4.36, 0.21, 4.0, 4.8),
];

struct Vendor {
    id: String,
    rating: f64,
    prep_time: f64,
    serving_distance: f64,
    delivery_charge: f64,
    registered: NaiveDate,
    coords: [f64; 2],
}

struct Customer {
    id: String,
    gender: f64,
    registered: NaiveDate,
    coords: [f64; 2],
    favourite: usize,
}

fn clipped_normal<R: Rng>(rng: &mut R, mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    Normal::new(mean, sd).unwrap().sample(rng).clamp(lo, hi)
}

fn round_to(x: f64, step: f64) -> f64 {
    (x / step).round() * step
}

fn start_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 1, 1).unwrap()
}

fn days_before(date: NaiveDate, days: f64) -> NaiveDate {
    date.checked_sub_days(Days::new(days.max(0.0) as u64)).unwrap()
}

/// Writes `config.n_rows` rows as CSV.
pub fn write_synthetic<W: Write>(out: W, config: &SyntheticConfig) -> Result<()> {
    if config.n_rows == 0 || config.n_vendors < 2 || config.n_customers == 0 {
        return Err(invalid("synthetic data needs rows, >= 2 vendors and customers"));
    }
    if !(0.0..=1.0).contains(&config.loyalty) {
        return Err(invalid(format!("loyalty must lie in [0, 1], got {}", config.loyalty)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let start = start_date();
    let loc = Normal::new(0.0, 0.3).unwrap();

    let vendors: Vec<Vendor> = (0..config.n_vendors)
        .map(|k| Vendor {
            id: format!("V{k:03}"),
            rating: round_to(clipped_normal(&mut rng, 4.36, 0.21, 4.0, 4.8), 0.1),
            prep_time: clipped_normal(&mut rng, 14.04, 2.25, 10.0, 20.0).round(),
            serving_distance: clipped_normal(&mut rng, 14.13, 2.82, 5.0, 15.0).round(),
            delivery_charge: if rng.random::<f64>() < 0.57 { 0.7 } else { 0.0 },
            registered: days_before(start, clipped_normal(&mut rng, 642.46, 125.91, 429.0, 805.0)),
            coords: [loc.sample(&mut rng), loc.sample(&mut rng)],
        })
        .collect();
    let customers: Vec<Customer> = (0..config.n_customers)
        .map(|i| Customer {
            id: format!("C{i:05}"),
            gender: f64::from(u8::from(rng.random::<f64>() < 0.9)),
            registered: days_before(start, clipped_normal(&mut rng, 616.71, 160.69, 255.0, 952.0)),
            coords: [loc.sample(&mut rng), loc.sample(&mut rng)],
            favourite: rng.random_range(0..config.n_vendors),
        })
        .collect();
    // Heavy-tailed activity: a few customers order often.
    let activity = WeightedIndex::new((1..=config.n_customers).map(|r| 1.0 / (r as f64).sqrt())).unwrap();
    let payment = WeightedIndex::new([0.78, 0.12, 0.06, 0.02, 0.02]).unwrap();
    let extra_items = Gamma::<f64>::new(0.382, 3.22).unwrap();
    let distance = Gamma::<f64>::new(1.9, 2.781).unwrap();
    let cost_noise = Normal::<f64>::new(0.0, 2.0).unwrap();

    let mut writer = csv::Writer::from_writer(out);
    let schema = ReplaySchema::default();
    let mut header = vec![schema.customer_id.clone(), schema.vendor_id.clone()];
    header.extend(schema.features.iter().cloned());
    header.extend([
        schema.customer_registered.clone(),
        schema.vendor_registered.clone(),
        schema.customer_latitude.clone(),
        schema.customer_longitude.clone(),
        schema.vendor_latitude.clone(),
        schema.vendor_longitude.clone(),
        schema.order_date.clone().unwrap_or_default(),
    ]);
    writer.write_record(&header)?;

    let date = |d: NaiveDate| d.format("%Y-%m-%d").to_string();
    for row in 0..config.n_rows {
        let c = &customers[activity.sample(&mut rng)];
        let k = if rng.random::<f64>() < config.loyalty { c.favourite } else { rng.random_range(0..config.n_vendors) };
        let v = &vendors[k];
        let items = (1.0 + extra_items.sample(&mut rng).round()).min(38.0);
        let total = (4.5 * items + 2.05 + cost_noise.sample(&mut rng)).clamp(0.0, 131.0);
        let pay = (payment.sample(&mut rng) + 1) as f64;
        let driver = if rng.random::<f64>() < 0.11 {
            if rng.random::<f64>() < 0.8 {
                5.0
            } else {
                4.0
            }
        } else {
            0.0
        };
        let delivery = if rng.random::<f64>() < 0.3 { 0.0 } else { distance.sample(&mut rng).min(14.97) };
        let order_day = start.checked_add_days(Days::new((row * 365 / config.n_rows) as u64)).unwrap();
        let values = [
            items,
            round_to(total, 0.01),
            pay,
            driver,
            round_to(delivery, 0.01),
            c.gender,
            v.delivery_charge,
            v.serving_distance,
            v.prep_time,
            v.rating,
        ];
        let mut record = vec![c.id.clone(), v.id.clone()];
        record.extend(values.iter().map(|x| format!("{x}")));
        record.extend([
            date(c.registered),
            date(v.registered),
            format!("{:.6}", c.coords[0]),
            format!("{:.6}", c.coords[1]),
            format!("{:.6}", v.coords[0]),
            format!("{:.6}", v.coords[1]),
            date(order_day),
        ]);
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_synthetic_file(path: &Path, config: &SyntheticConfig) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_synthetic(std::io::BufWriter::new(file), config)
}
