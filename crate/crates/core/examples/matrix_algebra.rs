//! Skew-Hermitian algebra, the exponential map and conjugation.

use ymlab::lie::{exp_map, inner_product, skew_project, unitarity_defect, MatrixValue, C64};

fn main() -> ymlab::Result<()> {
    let m = MatrixValue::from_fn(2, |i, j| C64::new((i + 2 * j) as f64 * 0.3, (i as f64 - j as f64) * 0.7));
    let x = skew_project(&m);
    let u = exp_map(&x);
    println!("X = {:?}", x.value().as_slice());
    println!("unitarity defect of exp(X): {:.2e}", unitarity_defect(u.value()));
    println!("det exp(X) = {:.6}", u.value().determinant());

    let y = skew_project(&MatrixValue::from_real_rows(&[&[0.0, 1.0], &[-1.0, 0.0]]));
    let c = u.conjugate(y.value());
    println!("<Y, Y> = {:.12}", inner_product(y.value(), y.value())?);
    println!("<uYu^-1, uYu^-1> = {:.12}", inner_product(&c, &c)?);
    Ok(())
}
