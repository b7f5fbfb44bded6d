use cocycle_lab::arithmetic::Irrational;
use cocycle_lab::spectrum::{band_spectrum, band_centers};
use cocycle_lab::growth::growth_report;

fn main() {
    let alpha = Irrational::golden();
    let bs = band_spectrum(0.5, 34, 55).unwrap();
    let centers = band_centers(&bs).unwrap();
    let energy = centers[centers.len() / 2];
    let rep = growth_report(0.5, &alpha, energy, 0.3, 1.0, 100_000).unwrap();
    for r in rep.rows.iter().filter(|r| r.n >= 50) {
        println!("n={:>7} exponent {:.4} ln_norm {:.3}", r.n, r.exponent, r.exponent * (r.n as f64).ln());
    }
}
