//! Writes a synthetic ionosphere-scale domain (351 rows, 33 features in
//! [-1, 1], labels `g`/`b`) to the path given as the first argument.
//!
//! Each feature mixes a weak class signal with shared nuisance factors, so
//! a handful of features gives a mediocre classifier while all of them
//! together can cancel most of the nuisance.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const ROWS: usize = 351;
const POSITIVE: usize = 225;
const FEATURES: usize = 33;
const FACTORS: usize = 3;

fn main() -> std::io::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "data/ionosphere_like.csv".into());
    let mut rng = ChaCha8Rng::seed_from_u64(351);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

    let signal: Vec<f64> = (0..FEATURES)
        .map(|k| 0.40 / (1.0 + 0.08 * k as f64))
        .collect();
    let loadings: Vec<[f64; FACTORS]> = (0..FEATURES)
        .map(|_| [normal(&mut rng), normal(&mut rng), normal(&mut rng)])
        .collect();

    let mut out = std::io::BufWriter::new(std::fs::File::create(&path)?);
    let header: Vec<String> = (1..=FEATURES)
        .map(|k| format!("a{k:02}"))
        .chain(["class".into()])
        .collect();
    writeln!(out, "{}", header.join(","))?;
    for i in 0..ROWS {
        let y = if i < POSITIVE { 1.0 } else { -1.0 };
        let h: Vec<f64> = (0..FACTORS).map(|_| normal(&mut rng)).collect();
        let mut cells = Vec::with_capacity(FEATURES + 1);
        for k in 0..FEATURES {
            let v = if k == 0 {
                // a binary pulse indicator, like the first radar attribute
                f64::from(u8::from(
                    rng.gen::<f64>() < if y > 0.0 { 0.95 } else { 0.75 },
                ))
            } else {
                let nuisance: f64 = loadings[k].iter().zip(&h).map(|(l, z)| l * z).sum();
                (signal[k] * y + 0.6 * nuisance + 0.9 * normal(&mut rng)).tanh()
            };
            cells.push(format!("{:.5}", v));
        }
        cells.push(if y > 0.0 { "g".into() } else { "b".into() });
        writeln!(out, "{}", cells.join(","))?;
    }
    out.flush()
}
