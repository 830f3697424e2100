use gbc_core::expr::parse_map;
use gbc_core::geometry::*;
use gbc_core::jet::eval_jet3;

fn main() {
    let map = parse_map("0.5*sin(x1)*x2 + 0.3*exp(-x3^2)", 5, 1).unwrap();
    let x = [0.7, -0.2, 0.4, 1.0, -0.6];
    let jet = eval_jet3(&map, &x).unwrap();
    let fo = first_order(&jet).unwrap();
    let mut cd = curvature(&jet, &fo);
    p_tensors(&mut cd, &fo);
    println!("P2 fro = {:e}", cd.p2_uuuu.frobenius_norm());
    println!("Riem fro = {:e}", cd.riem_dddd.frobenius_norm());
    println!("abs_contract = {:e}", cd.p2_uuuu.abs_contract(&cd.riem_dddd));
    println!("direct = {:e}", cd.p2_uuuu.full_contract(&cd.riem_dddd));
}
