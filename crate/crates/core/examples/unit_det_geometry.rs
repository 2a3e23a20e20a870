//! Walks along geodesics of the unit-determinant SPD and Cholesky manifolds
//! and shows the determinant staying at one.

use corecov::matops::{chol, Mat};
use corecov::spd::{normalize_chol_unit_det, normalize_spd_unit_det, UnitDetGeometry};

fn main() -> corecov::Result<()> {
    let m = Mat::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
    let dir = Mat::from_row_slice(3, 3, &[1.0, 0.3, 0.0, 0.3, -0.5, 0.2, 0.0, 0.2, 0.1]);
    let points = [
        (UnitDetGeometry::AffineInvariant, normalize_spd_unit_det(&m)?),
        (UnitDetGeometry::Cholesky, normalize_chol_unit_det(&chol(&m)?)),
    ];
    for (geom, x) in points {
        let v = geom.project(&x, &dir)?;
        println!("{geom:?}: |V|_x = {:.4}", geom.inner(&x, &v, &v)?.sqrt());
        for t in [0.0, 0.5, 1.0, 2.0] {
            let y = geom.exp(&x, &v, t)?;
            println!("  t = {t:.1}: det = {:.12}", y.determinant());
        }
        println!("  tangent basis size {}", geom.tangent_basis(&x)?.len());
    }
    Ok(())
}
