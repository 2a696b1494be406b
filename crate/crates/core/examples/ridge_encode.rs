//! Encode images against a fixed basis in closed form and check the normal equations.

use std::path::PathBuf;

use ndarray::{Array1, Array2};
use sdg::dictionary::{DictionaryInit, FrequencyInit};
use sdg::rng::SeededRng;
use sdg::training::RidgeEncoder;
use sdg::{make_time_grid, read_cifar_batch, reconstruct, synthesize_basis, SpectralDictionary};

fn main() -> sdg::Result<()> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/natural_256.bin");
    let images = read_cifar_batch(&path, Some(64))?;
    let (train, unseen) = images.split_at(48);
    let len = images[0].len();
    let grid = make_time_grid(len)?;
    let mut rng = SeededRng::new(3);
    for atoms in [32, 128, 256] {
        let init = DictionaryInit {
            atoms,
            frequency: FrequencyInit::Spectrum,
            ..DictionaryInit::default()
        };
        let dict = SpectralDictionary::initialize(&init, len, train, &mut rng)?;
        let basis = synthesize_basis(&dict, &grid);
        let lambda = 1e-3;
        let enc = RidgeEncoder::new(&basis, lambda)?;
        let s = &basis.0;
        let gram: Array2<f64> = s.t().dot(s) + Array2::<f64>::eye(atoms) * lambda;
        let (mut mse, mut resid) = (0.0, 0.0f64);
        for x in unseen {
            let w = enc.encode(x)?;
            let xhat = reconstruct(&basis, &w)?;
            mse += xhat.values.iter().zip(&x.values).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / len as f64;
            let r = gram.dot(&Array1::from(w.0.clone())) - s.t().dot(&Array1::from(x.values.clone()));
            resid = resid.max(r.iter().fold(0.0, |m, v| m.max(v.abs())));
        }
        println!(
            "K={atoms:3}  unseen-image MSE {:.5}  normal-equation residual {resid:.2e}",
            mse / unseen.len() as f64
        );
    }
    Ok(())
}
