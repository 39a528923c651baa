// Per-cell transport cost in cumulative-mass variables.
//
// For cell k with edges x_k, x_k + h and mass interval [a, b] the new
// quantile is linear from x_k to x_k + h, so
//
//   w(a, b) = ½ ∫_a^b (L(s) − q(s))² ds
//
// against the previous quantile q. With s = a + tD, D = b − a and
// e(t) = x_k + h t − q(a + tD) everything reduces to integrals of piecewise
// linear functions of t. R(t) = (q(a + tD) − q(a+)) / D carries the
// second-order terms; it is accumulated piece by piece (slope β per unit t
// inside a piece, jump/D across gaps) rather than by differencing q.

use crate::measure::Quantile;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct CellTerm {
    pub w: f64,
    pub ga: f64,
    pub gb: f64,
    pub haa: f64,
    pub hbb: f64,
    pub hab: f64,
}

pub(crate) fn cell_term(q: &Quantile, a: f64, b: f64, xk: f64, h: f64) -> CellTerm {
    let pieces = &q.pieces;
    let last = pieces.len() - 1;
    // right-limit piece at a
    let k0 = pieces.partition_point(|p| p.s1 <= a).min(last);
    let d = b - a;
    if !(d > 0.0) {
        let p = &pieces[k0];
        let beta = p.slope();
        let q0 = p.eval(a.max(p.s0));
        let e0 = xk - q0;
        let e1 = xk + h - q0;
        let ebar0 = xk + 0.5 * h - q0;
        let ebar1 = 0.5 * xk + h / 3.0 - 0.5 * q0;
        return CellTerm {
            w: 0.0,
            ga: -0.5 * e0 * e0 - h * (ebar0 - ebar1),
            gb: 0.5 * e1 * e1 - h * ebar1,
            haa: e0 * beta + h * beta / 3.0,
            hbb: -e1 * beta + h * beta / 3.0,
            hab: h * beta / 6.0,
        };
    }

    let mut w = 0.0;
    let mut e_int0 = 0.0;
    let mut e_int1 = 0.0;
    let mut r_int = 0.0;
    let mut rt_int = 0.0;
    let mut r = 0.0;
    let mut e_start = 0.0;
    let mut e_end;
    let mut beta_start = 0.0;
    let mut beta_end;
    let mut prev_x1 = f64::NAN;
    let mut k = k0;
    loop {
        let p = &pieces[k];
        let s_lo = if k == k0 { a } else { p.s0 };
        let s_hi = if k == last { b } else { p.s1.min(b) };
        let t0 = (s_lo - a) / d;
        let t1 = if s_hi >= b { 1.0 } else { (s_hi - a) / d };
        let dt = t1 - t0;
        let beta = p.slope();
        let qv0 = p.eval(s_lo);
        let qv1 = p.eval(s_hi);
        if k == k0 {
            beta_start = beta;
            e_start = xk - qv0;
        } else {
            r += (p.x0 - prev_x1) / d;
        }
        let e0 = xk + h * t0 - qv0;
        let e1 = xk + h * t1 - qv1;
        // β is dq/ds; per unit t the slope of R is β as well
        let r0 = r;
        w += 0.5 * d * dt * (e0 * e0 + e0 * e1 + e1 * e1) / 3.0;
        e_int0 += 0.5 * dt * (e0 + e1);
        e_int1 += dt * (e0 * (2.0 * t0 + t1) + e1 * (t0 + 2.0 * t1)) / 6.0;
        r_int += dt * r0 + 0.5 * beta * dt * dt;
        rt_int += 0.5 * r0 * dt * (t0 + t1) + beta * (0.5 * t0 * dt * dt + dt * dt * dt / 3.0);
        r = r0 + beta * dt;
        prev_x1 = p.x1;
        beta_end = beta;
        e_end = xk + h - qv1;
        if s_hi >= b || k == last {
            break;
        }
        k += 1;
    }
    CellTerm {
        w,
        ga: -0.5 * e_start * e_start - h * (e_int0 - e_int1),
        gb: 0.5 * e_end * e_end - h * e_int1,
        haa: e_start * beta_start + 2.0 * h * (r_int - rt_int),
        hbb: -e_end * beta_end + h * (r - 2.0 * rt_int),
        hab: h * (2.0 * rt_int - r_int),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{DensityField, Grid};
    use alloc::vec;
    use alloc::vec::Vec;

    fn prev() -> Quantile {
        let g = Grid::new(0.0, 1.0, 8).unwrap();
        let r = DensityField::new(g, vec![0.0, 1.5, 2.0, 0.0, 0.0, 1.0, 3.0, 0.5]).unwrap();
        Quantile::of(&r).unwrap()
    }

    fn fd(f: impl Fn(f64, f64) -> f64, a: f64, b: f64) -> (f64, f64) {
        let e = 1e-7;
        (
            (f(a + e, b) - f(a - e, b)) / (2.0 * e),
            (f(a, b + e) - f(a, b - e)) / (2.0 * e),
        )
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let q = prev();
        let h = 0.125;
        let cases: Vec<(f64, f64, f64)> = vec![
            (0.05, 0.2, 0.25),
            (0.1, 0.55, 0.5),
            (0.3, 0.31, 0.0),
            (0.2, 0.6, 0.875),
            (0.0, 0.9, 0.375),
        ];
        for (a, b, xk) in cases {
            let c = cell_term(&q, a, b, xk, h);
            let (ga, gb) = fd(|a, b| cell_term(&q, a, b, xk, h).w, a, b);
            assert!((c.ga - ga).abs() < 1e-6, "ga {a} {b}: {} vs {ga}", c.ga);
            assert!((c.gb - gb).abs() < 1e-6, "gb {a} {b}: {} vs {gb}", c.gb);
            let (haa, hab) = fd(|a, b| cell_term(&q, a, b, xk, h).ga, a, b);
            let (_, hbb) = fd(|a, b| cell_term(&q, a, b, xk, h).gb, a, b);
            let tol = 1e-5 * (1.0 + haa.abs() + hbb.abs());
            assert!((c.haa - haa).abs() < tol, "haa {a} {b}: {} vs {haa}", c.haa);
            assert!((c.hbb - hbb).abs() < tol, "hbb {a} {b}: {} vs {hbb}", c.hbb);
            assert!((c.hab - hab).abs() < tol, "hab {a} {b}: {} vs {hab}", c.hab);
        }
    }

    #[test]
    fn empty_cell_is_the_limit() {
        let q = prev();
        let h = 0.125;
        let a = 0.4;
        let z = cell_term(&q, a, a, 0.5, h);
        let t = cell_term(&q, a, a + 1e-9, 0.5, h);
        assert!((z.ga - t.ga).abs() < 1e-6);
        assert!((z.gb - t.gb).abs() < 1e-6);
        assert!((z.hab - t.hab).abs() < 1e-6);
    }
}
