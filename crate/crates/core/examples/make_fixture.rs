//! Writes `tests/fixtures/market_pulse.csv`: six daily price series driven by
//! four common factors plus small idiosyncratic noise, with an arbitrage
//! drift switched on between rows `PULSE_START` and `PULSE_END`.
//!
//! The drift points along a null direction of the common-factor loadings
//! (with a constant-1 numéraire prepended, as `add_numeraire` does at
//! ingestion), so only the idiosyncratic noise masks it.
//!
//! Run with `cargo run --example make_fixture`.

use arbcurve::model::{null_space, MarketModel};
use arbcurve::simulator::{simulate, SimConfig};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

const RISKY: usize = 6;
const FACTORS: usize = 4;
const IDIO_VOL: f64 = 1e-3;
const PULSE_SIZE: f64 = 1.2 * IDIO_VOL;
pub const PULSE_START: usize = 500;
pub const PULSE_END: usize = 800;
const ROWS: usize = 1000;

fn main() {
    let mut rng = ChaCha20Rng::seed_from_u64(2024);
    let mut vol = DMatrix::zeros(RISKY, FACTORS + RISKY);
    for i in 0..RISKY {
        for a in 0..FACTORS {
            vol[(i, a)] = rng.random_range(-0.01..0.01);
        }
        vol[(i, FACTORS + i)] = IDIO_VOL;
    }
    let premium = DVector::from_fn(FACTORS, |_, _| rng.random_range(-0.02..0.02));
    let start = DVector::from_fn(RISKY, |_, _| rng.random_range(20.0..200.0));

    // null direction of the common factors in the market with the numéraire
    let mut common = DMatrix::zeros(RISKY + 1, FACTORS);
    common.view_mut((1, 0), (RISKY, FACTORS)).copy_from(&vol.columns(0, FACTORS));
    let j = null_space(&common).column(0).into_owned();

    let base = DVector::from_fn(RISKY, |i, _| vol.row(i).columns(0, FACTORS).dot(&premium.transpose()));
    let pulse = DVector::from_fn(RISKY, |i, _| PULSE_SIZE * (j[i + 1] - j[0]));

    let segments = [(PULSE_START, false), (PULSE_END - PULSE_START, true), (ROWS - 1 - PULSE_END, false)];
    let mut rows: Vec<DVector<f64>> = vec![start.clone()];
    for (seg, (len, on)) in segments.iter().enumerate() {
        let drift = if *on { &base + &pulse } else { base.clone() };
        let init = rows.last().unwrap().clone();
        let model = MarketModel::new(drift, vol.clone(), init).unwrap();
        let sim = simulate(&SimConfig { model, n_steps: *len, seed: 77 + seg as u64, microstructure_var: 0.0 }).unwrap();
        for r in 1..sim.clean.len() {
            rows.push(sim.clean.prices().row(r).transpose());
        }
    }
    assert_eq!(rows.len(), ROWS);

    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/market_pulse.csv");
    let mut w = csv::Writer::from_path(path).unwrap();
    let mut header = vec!["date".to_string()];
    header.extend(["ALPHA", "BRAVO", "CHARLIE", "DELTA", "ECHO", "FOXTROT"].map(String::from));
    w.write_record(&header).unwrap();
    for (date, row) in business_days().zip(&rows) {
        let mut rec = vec![date];
        rec.extend(row.iter().map(|p| format!("{p:.4}")));
        w.write_record(&rec).unwrap();
    }
    w.flush().unwrap();
    println!("wrote {path}");
}

/// ISO dates of weekdays from Monday 2021-01-04.
fn business_days() -> impl Iterator<Item = String> {
    let first = days_from_civil(2021, 1, 4);
    (0..).map(move |n: i64| first + 7 * (n / 5) + n % 5).map(|d| {
        let (y, m, day) = civil_from_days(d);
        format!("{y:04}-{m:02}-{day:02}")
    })
}

fn days_from_civil(y: i64, m: i64, d: i64) -> i64 {
    let y = if m <= 2 { y - 1 } else { y };
    let era = y.div_euclid(400);
    let yoe = y - era * 400;
    let doy = (153 * (m + if m > 2 { -3 } else { 9 }) + 2) / 5 + d - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146097 + doe - 719468
}

fn civil_from_days(z: i64) -> (i64, i64, i64) {
    let z = z + 719468;
    let era = z.div_euclid(146097);
    let doe = z - era * 146097;
    let yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = doy - (153 * mp + 2) / 5 + 1;
    let m = if mp < 10 { mp + 3 } else { mp - 9 };
    (yoe + era * 400 + i64::from(m <= 2), m, d)
}
