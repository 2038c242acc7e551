use nalgebra::Vector3;
use platefit::mesh::{generate_plate_mesh, DisplacementField, WedgeMesh};
use platefit::synthdata::{add_noise, denoise_krr, NoiseSpec};

fn smooth_field(mesh: &WedgeMesh) -> DisplacementField {
    let mut f = DisplacementField::zero(mesh);
    for n in 0..mesh.n_nodes() {
        let p = mesh.node(n);
        f.values_mut()[n] = Vector3::new(
            0.4 * p.x + 0.05 * (0.07 * p.y).sin(),
            0.9 * p.y - 0.04 * (0.06 * p.x).cos(),
            0.1 * p.z - 0.03 * (0.05 * (p.x + p.y)).sin(),
        );
    }
    f
}

fn rms_diff(a: &DisplacementField, b: &DisplacementField) -> f64 {
    let n = a.values().len() as f64;
    (a.values().iter().zip(b.values()).map(|(x, y)| (x - y).norm_squared()).sum::<f64>() / (3.0 * n)).sqrt()
}

#[test]
fn probe() {
    let mesh = generate_plate_mesh(50.0, 1.0, 14).unwrap();
    let clean = smooth_field(&mesh);
    let noisy = add_noise(&clean, &NoiseSpec { sigma: 5e-3, seed: 11 });
    println!("raw error {}", rms_diff(&noisy, &clean));
    for b in platefit::synthdata::default_bandwidth_grid(&mesh) {
        for r in platefit::synthdata::default_ridge_grid() {
            if let Ok((out, rep)) = denoise_krr(&mesh, &noisy, &[b], &[r], 1, 0) {
                println!("b {:8.3} r {:9.1e} residual {:9.3e} err {:9.3e} sighat {:9.3e}", b, r, rep.residual_rms, rms_diff(&out, &clean), rep.sigma_hat);
            }
        }
    }
}
