//! Toom-Cook construction of Winograd transform matrices.
//!
//! For tile side `T`, kernel side `K` and output side `T' = T - K + 1`, the basis
//! satisfies, for every `T x T` input tile `x` and `K x K` kernel `w`,
//!
//! ```text
//! Aᵀ [ (G w Gᵀ) ⊙ (B x Bᵀ) ] A  =  valid cross-correlation of x with w  (T' x T')
//! ```
//!
//! with `A: T x T'`, `B: T x T` and `G: T x K`. `B` is the matrix applied on the
//! left of the input tile. Nodes are `T - 1` distinct finite rationals plus the
//! point at infinity, which always occupies the last row.
//!
//! Row scaling is normalized so the kernel transform rows carry `1 / |f_i|`
//! (`f_i` the product of node differences) and the infinity row of `B` has a
//! positive lowest-order coefficient. For nodes `{0, 1, -1}` this yields the
//! familiar F(2, 3) matrices.

use std::fmt::Write as _;

use num_rational::Ratio;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{ConvError, Result};

pub type Rational = Ratio<i128>;

pub const MIN_TILE: usize = 4;
pub const MAX_TILE: usize = 8;

/// Row-major exact matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RatMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Rational>,
}

impl RatMatrix {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Rational::zero(); rows * cols],
        }
    }

    pub fn at(&self, r: usize, c: usize) -> Rational {
        self.data[r * self.cols + c]
    }

    fn set(&mut self, r: usize, c: usize, v: Rational) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[Rational] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data
            .iter()
            .map(|v| v.to_f64().expect("finite rational"))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct WinogradBasis {
    tile: usize,
    kernel: usize,
    points: Vec<Rational>,
    a: RatMatrix,
    b: RatMatrix,
    g: RatMatrix,
    a32: Vec<f32>,
    b32: Vec<f32>,
    g64: Vec<f64>,
}

/// Coefficients (lowest order first) of `prod (x - r)` over `roots`.
fn poly_from_roots<'a>(roots: impl Iterator<Item = &'a Rational>) -> Vec<Rational> {
    let mut coeffs = vec![Rational::one()];
    for root in roots {
        let mut next = vec![Rational::zero(); coeffs.len() + 1];
        for (i, &c) in coeffs.iter().enumerate() {
            next[i + 1] += c;
            next[i] -= c * root;
        }
        coeffs = next;
    }
    coeffs
}

fn pow(x: Rational, e: usize) -> Rational {
    (0..e).fold(Rational::one(), |acc, _| acc * x)
}

impl WinogradBasis {
    pub fn new(tile: usize, kernel: usize, points: &[Rational]) -> Result<Self> {
        if kernel == 0 || tile <= kernel {
            return Err(ConvError::InvalidParameter(format!(
                "tile side {tile} must exceed kernel side {kernel} >= 1"
            )));
        }
        if points.len() != tile - 1 {
            return Err(ConvError::InvalidParameter(format!(
                "{} interpolation points given, T={tile} needs {}",
                points.len(),
                tile - 1
            )));
        }
        for (i, p) in points.iter().enumerate() {
            if points[..i].contains(p) {
                return Err(ConvError::DuplicatePoint(p.to_string()));
            }
        }

        let out = tile - kernel + 1;
        let inf = tile - 1;
        let mut a = RatMatrix::zeros(tile, out);
        let mut b = RatMatrix::zeros(tile, tile);
        let mut g = RatMatrix::zeros(tile, kernel);

        for (i, &p) in points.iter().enumerate() {
            let others = || {
                points
                    .iter()
                    .enumerate()
                    .filter(move |&(k, _)| k != i)
                    .map(|(_, q)| q)
            };
            let f: Rational = others().map(|&q| p - q).product();
            let sign = f.signum();
            for j in 0..out {
                a.set(i, j, pow(p, j));
            }
            for j in 0..kernel {
                g.set(i, j, pow(p, j) / f.abs());
            }
            for (j, c) in poly_from_roots(others()).into_iter().enumerate() {
                b.set(i, j, c * sign);
            }
        }

        let m = poly_from_roots(points.iter());
        let sigma = m
            .iter()
            .find(|c| !c.is_zero())
            .map(Rational::signum)
            .unwrap_or_else(Rational::one);
        for (j, c) in m.into_iter().enumerate() {
            b.set(inf, j, c * sigma);
        }
        a.set(inf, out - 1, sigma);
        g.set(inf, kernel - 1, Rational::one());

        let a32 = a.to_f64().into_iter().map(|v| v as f32).collect();
        let b32 = b.to_f64().into_iter().map(|v| v as f32).collect();
        let g64 = g.to_f64();
        Ok(Self {
            tile,
            kernel,
            points: points.to_vec(),
            a,
            b,
            g,
            a32,
            b32,
            g64,
        })
    }

    /// Basis for `T` using [`default_points`].
    pub fn with_default_points(tile: usize, kernel: usize) -> Result<Self> {
        Self::new(tile, kernel, &default_points(tile)?)
    }

    pub fn tile(&self) -> usize {
        self.tile
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn out_tile(&self) -> usize {
        self.tile - self.kernel + 1
    }

    pub fn points(&self) -> &[Rational] {
        &self.points
    }

    /// Inverse-transform factor, `T x T'`.
    pub fn a(&self) -> &RatMatrix {
        &self.a
    }

    /// Input-transform factor, `T x T`, applied as `B x Bᵀ`.
    pub fn b(&self) -> &RatMatrix {
        &self.b
    }

    /// Kernel-transform factor, `T x K`.
    pub fn g(&self) -> &RatMatrix {
        &self.g
    }

    pub fn a_f32(&self) -> &[f32] {
        &self.a32
    }

    pub fn b_f32(&self) -> &[f32] {
        &self.b32
    }

    pub fn g_f64(&self) -> &[f64] {
        &self.g64
    }

    /// Human-readable dump of the exact matrices.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let pts: Vec<String> = self.points.iter().map(ToString::to_string).collect();
        let _ = writeln!(
            s,
            "tile = {}\nkernel = {}\nout_tile = {}",
            self.tile,
            self.kernel,
            self.out_tile()
        );
        let _ = writeln!(s, "points = [{}, inf]", pts.join(", "));
        for (name, m) in [("A", &self.a), ("B", &self.b), ("G", &self.g)] {
            let _ = writeln!(s, "\n[{name}]  # {}x{}", m.rows, m.cols);
            for r in 0..m.rows {
                let row: Vec<String> = m.row(r).iter().map(|v| format!("{v:>6}")).collect();
                let _ = writeln!(s, "  {}", row.join(" "));
            }
        }
        s
    }
}

/// Fixed node set per tile side, growing as `0, 1, -1, 2, -2, 1/2, -1/2`.
pub fn default_points(tile: usize) -> Result<Vec<Rational>> {
    if !(MIN_TILE..=MAX_TILE).contains(&tile) {
        return Err(ConvError::UnsupportedTile(tile));
    }
    let r = |n, d| Rational::new(n, d);
    let nodes = [
        r(0, 1),
        r(1, 1),
        r(-1, 1),
        r(2, 1),
        r(-2, 1),
        r(1, 2),
        r(-1, 2),
    ];
    Ok(nodes[..tile - 1].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ints(v: &[i128]) -> Vec<Rational> {
        v.iter().map(|&x| Rational::from_integer(x)).collect()
    }

    fn exact_1d_ok(basis: &WinogradBasis) -> bool {
        // 1-D identity: Aᵀ[(G w) ⊙ (B x)] equals valid correlation, checked on basis vectors.
        let (t, k, o) = (basis.tile(), basis.kernel(), basis.out_tile());
        for xi in 0..t {
            for wi in 0..k {
                let bx: Vec<Rational> = (0..t).map(|r| basis.b().at(r, xi)).collect();
                let gw: Vec<Rational> = (0..t).map(|r| basis.g().at(r, wi)).collect();
                for y in 0..o {
                    let got: Rational = (0..t).map(|r| basis.a().at(r, y) * bx[r] * gw[r]).sum();
                    let want = if y + wi == xi {
                        Rational::one()
                    } else {
                        Rational::zero()
                    };
                    if got != want {
                        return false;
                    }
                }
            }
        }
        true
    }

    #[test]
    fn f23_matrices() {
        let basis = WinogradBasis::new(4, 3, &ints(&[0, 1, -1])).unwrap();
        let h = Rational::new(1, 2);
        let one = Rational::one();
        let z = Rational::zero();
        assert_eq!(
            basis.g().data,
            vec![one, z, z, h, h, h, h, -h, h, z, z, one]
        );
        let bt = [[1, 0, -1, 0], [0, 1, 1, 0], [0, -1, 1, 0], [0, 1, 0, -1]];
        for (r, row) in bt.iter().enumerate() {
            assert_eq!(basis.b().row(r), &ints(row)[..]);
        }
        let at = [[1, 1, 1, 0], [0, 1, -1, -1]];
        for (c, col) in at.iter().enumerate() {
            let got: Vec<Rational> = (0..4).map(|r| basis.a().at(r, c)).collect();
            assert_eq!(got, ints(col));
        }
    }

    #[test]
    fn exact_identity_all_tiles() {
        for t in MIN_TILE..=MAX_TILE {
            for k in 1..t {
                let basis = WinogradBasis::with_default_points(t, k).unwrap();
                assert!(exact_1d_ok(&basis), "T={t} K={k}");
            }
        }
    }

    #[test]
    fn invalid_parameters() {
        assert!(matches!(
            WinogradBasis::new(3, 3, &ints(&[0, 1])),
            Err(ConvError::InvalidParameter(_))
        ));
        assert!(matches!(
            WinogradBasis::new(4, 3, &ints(&[0, 1, 1])),
            Err(ConvError::DuplicatePoint(_))
        ));
        assert!(matches!(
            WinogradBasis::new(4, 3, &ints(&[0, 1])),
            Err(ConvError::InvalidParameter(_))
        ));
    }

    #[test]
    fn default_point_sets() {
        assert_eq!(default_points(4).unwrap(), ints(&[0, 1, -1]));
        let mut seven = ints(&[0, 1, -1, 2, -2]);
        seven.push(Rational::new(1, 2));
        assert_eq!(default_points(7).unwrap(), seven);
        assert_eq!(default_points(9), Err(ConvError::UnsupportedTile(9)));
        assert_eq!(default_points(3), Err(ConvError::UnsupportedTile(3)));
    }

    #[test]
    fn dump_mentions_all_matrices() {
        let text = WinogradBasis::with_default_points(4, 3).unwrap().to_text();
        assert!(text.contains("[A]") && text.contains("[B]") && text.contains("[G]"));
        assert!(text.contains("1/2"));
    }
}
