#![allow(dead_code)]

use polydecouple::linalg::DenseMatrix;
use polydecouple::poly::{DecoupledModel, MultiPoly, PolySystem, UniPoly};

pub fn system(m: usize, polys: &[&[(&[u32], f64)]]) -> PolySystem {
    let polys = polys
        .iter()
        .map(|terms| MultiPoly::from_terms(m, terms.iter().map(|(e, c)| (e.to_vec(), *c))).unwrap())
        .collect();
    PolySystem::new(m, polys).unwrap()
}

/// The running two-input, two-output cubic example.
pub fn running_example() -> PolySystem {
    system(
        2,
        &[
            &[
                (&[3, 0], 54.0),
                (&[2, 1], -54.0),
                (&[2, 0], 8.0),
                (&[1, 2], 18.0),
                (&[1, 1], 16.0),
                (&[0, 3], -2.0),
                (&[0, 2], 8.0),
                (&[0, 1], 8.0),
                (&[0, 0], 1.0),
            ],
            &[
                (&[3, 0], -27.0),
                (&[2, 1], 27.0),
                (&[2, 0], -24.0),
                (&[1, 2], -9.0),
                (&[1, 1], -48.0),
                (&[1, 0], -15.0),
                (&[0, 3], 1.0),
                (&[0, 2], -24.0),
                (&[0, 1], -19.0),
                (&[0, 0], -3.0),
            ],
        ],
    )
}

pub fn running_example_truth() -> DecoupledModel {
    DecoupledModel::new(
        DenseMatrix::from_rows(&[[-2.0, 3.0], [-2.0, -1.0]]).unwrap(),
        DenseMatrix::from_rows(&[[1.0, 2.0], [-3.0, -1.0]]).unwrap(),
        vec![
            UniPoly::new(vec![1.0, -3.0, 2.0]).unwrap(),
            UniPoly::new(vec![0.0, -1.0, 0.0, 1.0]).unwrap(),
        ],
    )
    .unwrap()
}

/// Tensor-stage points of the running example.
pub fn running_example_tensor_points() -> Vec<Vec<f64>> {
    vec![vec![-1.0, 0.0], vec![1.0, -2.0]]
}

/// Coefficient-stage points of the running example.
pub fn running_example_coeff_points() -> Vec<Vec<f64>> {
    vec![
        vec![-0.20, 0.0],
        vec![0.25, -2.00],
        vec![0.50, 0.25],
        vec![0.0, 0.50],
    ]
}

/// Three inputs, three outputs, four branches, rank-deficient W.
pub fn fat_w_example() -> PolySystem {
    system(
        3,
        &[
            &[
                (&[2, 0, 0], -4.0),
                (&[1, 0, 1], 8.0),
                (&[1, 0, 0], 6.0),
                (&[0, 0, 2], -3.0),
                (&[0, 0, 1], -8.0),
                (&[0, 0, 0], -6.0),
            ],
            &[
                (&[2, 0, 0], 2.0),
                (&[1, 0, 1], -4.0),
                (&[1, 0, 0], -3.0),
                (&[0, 3, 0], 1.0),
                (&[0, 2, 1], 6.0),
                (&[0, 1, 2], 12.0),
                (&[0, 1, 0], -1.0),
                (&[0, 0, 3], 8.0),
                (&[0, 0, 2], 2.0),
                (&[0, 0, 1], 1.0),
                (&[0, 0, 0], 3.0),
            ],
            &[
                (&[2, 0, 0], -2.0),
                (&[1, 0, 1], 4.0),
                (&[1, 0, 0], 4.0),
                (&[0, 0, 2], -2.0),
                (&[0, 0, 1], -3.0),
                (&[0, 1, 0], -1.0),
                (&[0, 0, 0], -8.0),
            ],
        ],
    )
}

pub fn fat_w_truth() -> DecoupledModel {
    DecoupledModel::new(
        DenseMatrix::from_rows(&[
            [1.0, 0.0, 0.0, 1.0],
            [0.0, 1.0, 0.0, -1.0],
            [-1.0, 2.0, 1.0, 0.0],
        ])
        .unwrap(),
        DenseMatrix::from_rows(&[
            [-2.0, 0.0, 1.0, 0.0],
            [1.0, 1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0, 1.0],
        ])
        .unwrap(),
        vec![
            UniPoly::new(vec![3.0, -3.0, 2.0]).unwrap(),
            UniPoly::new(vec![0.0, -1.0, 0.0, 1.0]).unwrap(),
            UniPoly::new(vec![0.0, -2.0, 1.0]).unwrap(),
            UniPoly::new(vec![-5.0, 1.0]).unwrap(),
        ],
    )
    .unwrap()
}

pub fn fat_w_tensor_points() -> Vec<Vec<f64>> {
    vec![
        vec![-0.2500, 0.0, 0.3333],
        vec![0.0, -1.0, 0.0],
        vec![1.0, 0.5000, 0.3333],
        vec![0.3333, 0.0, -0.6667],
    ]
}

pub fn fat_w_coeff_points() -> Vec<Vec<f64>> {
    let mut pts = fat_w_tensor_points();
    pts.push(vec![0.3750, -0.6667, 1.0000]);
    pts
}

pub fn assert_close(a: f64, b: f64, tol: f64) {
    assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
}

/// Product of two polynomials by distributing every pair of terms.
pub fn naive_mul(a: &MultiPoly, b: &MultiPoly) -> MultiPoly {
    let mut out = MultiPoly::zero(a.num_vars());
    for (ea, ca) in a.terms() {
        for (eb, cb) in b.terms() {
            let e: Vec<u32> = ea.iter().zip(eb).map(|(x, y)| x + y).collect();
            out.add_term(e, ca * cb).unwrap();
        }
    }
    out
}

/// Expands `W g(Vᵀ u)` by repeated multiplication of the linear forms,
/// independent of the multinomial expansion in the library.
pub fn naive_expand(model: &DecoupledModel) -> PolySystem {
    let m = model.num_inputs();
    let v = model.v();
    let w = model.w();
    let branches: Vec<MultiPoly> = (0..model.num_branches())
        .map(|i| {
            let mut x = MultiPoly::zero(m);
            for j in 0..m {
                let mut e = vec![0; m];
                e[j] = 1;
                x.add_term(e, v[(j, i)]).unwrap();
            }
            let mut power = MultiPoly::constant(m, 1.0);
            let mut g = MultiPoly::zero(m);
            for &c in model.g()[i].coeffs() {
                g = &g + &(&power * c);
                power = naive_mul(&power, &x);
            }
            g
        })
        .collect();
    let polys = (0..model.num_outputs())
        .map(|p| {
            branches
                .iter()
                .enumerate()
                .fold(MultiPoly::zero(m), |acc, (i, g)| &acc + &(g * w[(p, i)]))
        })
        .collect();
    PolySystem::new(m, polys).unwrap()
}

/// Largest absolute coefficient difference over the union of supports.
pub fn max_coeff_diff(a: &PolySystem, b: &PolySystem) -> f64 {
    a.polys()
        .iter()
        .zip(b.polys())
        .map(|(p, q)| {
            let d = p + &(q * -1.0);
            d.terms().map(|(_, c)| c.abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

/// Central-difference Jacobian with step `h`.
pub fn central_difference_jacobian(sys: &PolySystem, u: &[f64], h: f64) -> DenseMatrix {
    let mut jac = DenseMatrix::zeros(sys.num_outputs(), sys.num_vars());
    for k in 0..sys.num_vars() {
        let mut up = u.to_vec();
        let mut dn = u.to_vec();
        up[k] += h;
        dn[k] -= h;
        let fp = sys.eval(&up).unwrap();
        let fm = sys.eval(&dn).unwrap();
        for i in 0..sys.num_outputs() {
            jac[(i, k)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

/// Relative Frobenius distance `‖a − b‖ / ‖b‖`.
pub fn rel_frobenius(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    let diff: Vec<f64> = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x - y).collect();
    polydecouple::linalg::norm(&diff) / b.frobenius_norm()
}

/// Random polynomial system with `terms` terms per output, exponents up to
/// `max_exp` and standard-normal coefficients.
pub fn random_system<R: rand::Rng>(
    m: usize,
    n: usize,
    terms: usize,
    max_exp: u32,
    rng: &mut R,
) -> PolySystem {
    let polys = (0..n)
        .map(|_| {
            let mut p = MultiPoly::zero(m);
            for _ in 0..terms {
                let e = (0..m).map(|_| rng.random_range(0..=max_exp)).collect();
                let c: f64 = rng.sample(rand_distr::StandardNormal);
                p.add_term(e, c).unwrap();
            }
            p
        })
        .collect();
    PolySystem::new(m, polys).unwrap()
}

/// Random model with standard-normal factors and branch coefficients.
pub fn random_model<R: rand::Rng>(m: usize, n: usize, r: usize, d: usize, rng: &mut R) -> DecoupledModel {
    let mut normal = |rows: usize, cols: usize| {
        let data = (0..rows * cols).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        DenseMatrix::new(rows, cols, data).unwrap()
    };
    let v = normal(m, r);
    let w = normal(n, r);
    let g = (0..r)
        .map(|_| UniPoly::new(normal(1, d + 1).as_slice().to_vec()).unwrap())
        .collect();
    DecoupledModel::new(v, w, g).unwrap()
}

pub fn seeded(seed: u64) -> rand_chacha::ChaCha8Rng {
    rand::SeedableRng::seed_from_u64(seed)
}
