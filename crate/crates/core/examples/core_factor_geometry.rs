//! Geometry of rank-r core factors: constraint Jacobian rank, manifold
//! dimensions and the vertical/horizontal split of a tangent vector.

use corecov::core_geometry::{
    expected_j_rank, horizontal_project, j_operator, manifold_dims, random_core_factor,
    vertical_project, RankTangentSpace,
};
use corecov::matops::{numerical_rank, Dims, Mat};

fn main() -> corecov::Result<()> {
    for (p1, p2, r) in [(2, 2, 3), (3, 2, 4), (4, 3, 5)] {
        let dims = Dims::with_rank(p1, p2, r)?;
        let f = random_core_factor(dims, 1)?;
        let (rows, cols) = f.constraint_residuals();
        let rank = numerical_rank(&j_operator(&f.a, dims)?, 1e-8);
        let md = manifold_dims(dims)?;
        println!(
            "({p1},{p2},{r}): residuals {rows:.1e}/{cols:.1e}, rank J = {rank} (expected {}), dims full {} factor {} psd {}",
            expected_j_rank(dims),
            md.full_rank,
            md.factor.unwrap(),
            md.psd.unwrap()
        );

        let space = RankTangentSpace::new(&f.a, dims)?;
        let v = space.project(&Mat::from_fn(dims.p(), r, |i, j| ((i * r + j) as f64).cos()));
        let ver = vertical_project(&f.a, &v)?;
        let hor = horizontal_project(&f.a, &v)?;
        println!(
            "  tangent |V| = {:.4}, vertical {:.4}, horizontal {:.4}, <V_v, V_h> = {:.1e}",
            v.norm(),
            ver.norm(),
            hor.norm(),
            ver.dot(&hor)
        );
    }
    Ok(())
}
