//! Fit a Gaussian to mixing vectors and draw new ones.
//!
//! Uses synthetic weights from a known two-dimensional Gaussian so the fit can
//! be compared with the truth, then samples images from a small trained model.

use ndarray::{arr1, arr2, Array2};
use sdg::prior::{sample_with_normals, CovarianceMode};
use sdg::rng::SeededRng;
use sdg::training::MixingInit;
use sdg::{cholesky, fit_gaussian, generate, make_time_grid, read_cifar_batch, sample_prior, train, MixingMatrix, TrainConfig};

fn main() -> sdg::Result<()> {
    let mu = arr1(&[1.0, -2.0]);
    let sigma = arr2(&[[2.0, 0.6], [0.6, 0.5]]);
    let l = cholesky(&sigma)?;
    let mut rng = SeededRng::new(11);
    let n = 10_000;
    let mut rows = Array2::zeros((n, 2));
    for mut r in rows.rows_mut() {
        let z = arr1(&[rng.standard_normal(), rng.standard_normal()]);
        r.assign(&(&mu + &l.dot(&z)));
    }
    let prior = fit_gaussian(&MixingMatrix { rows }, 0.0)?;
    println!("fitted mean {:.4} {:.4}", prior.mean[0], prior.mean[1]);
    println!("fitted covariance\n{:.4}", prior.covariance);
    println!("z = 0 gives {:?}", sample_with_normals(&prior, &[0.0, 0.0])?.0);
    for w in sample_prior(&prior, 5, 3) {
        println!("draw {:?}", w.0);
    }

    let path = std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/natural_256.bin");
    let images = read_cifar_batch(&path, Some(64))?;
    let cfg = TrainConfig {
        epochs: 5,
        atoms: 64,
        learning_rate: 1e-2,
        mixing_init: MixingInit::Ridge,
        ..TrainConfig::default()
    };
    let (model, _) = train(&images, &cfg)?;
    let grid = make_time_grid(images[0].len())?;
    for mode in [CovarianceMode::Full, CovarianceMode::Diagonal] {
        let prior = sdg::prior::fit_gaussian_with(&model.mixing, 1e-3, mode)?;
        let samples = generate(&prior, &model.dictionary, &grid, 0, 64)?;
        println!(
            "{mode:?} covariance: {:.2}% of generated pixels fall outside [-1, 1]",
            100.0 * sdg::prior::out_of_range_fraction(&samples)
        );
    }
    Ok(())
}
