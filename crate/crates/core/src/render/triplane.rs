use crate::model::TriPlanePayload;

use super::mlp::MLP_IN;

/// Local-coordinate axes spanned by each plane: XY, XZ, YZ.
pub const PLANE_AXES: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

/// Bilinear cell and weights of one plane lookup.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PlaneCell {
    pub row: usize,
    pub col: usize,
    pub wr: f64,
    pub wc: f64,
}

#[inline]
fn locate(v: f64, res: usize) -> (usize, f64) {
    if res == 1 {
        return (0, 0.0);
    }
    let p = (v + 1.0) * 0.5 * (res - 1) as f64;
    let i = (p.floor().max(0.0) as usize).min(res - 2);
    (i, p - i as f64)
}

pub fn plane_cells(res: usize, u: &[f64; 3]) -> [PlaneCell; 3] {
    PLANE_AXES.map(|(a, b)| {
        let (row, wr) = locate(u[a], res);
        let (col, wc) = locate(u[b], res);
        PlaneCell { row, col, wr, wc }
    })
}

/// Feature at local point `u`: the sum of the three bilinear plane samples.
/// Only the first eight channels feed the shading network.
pub fn sample_with_cells(payload: &TriPlanePayload, cells: &[PlaneCell; 3]) -> [f64; MLP_IN] {
    let res = payload.res();
    let ch = payload.channels().min(MLP_IN);
    let mut f = [0.0; MLP_IN];
    for (p, cell) in cells.iter().enumerate() {
        if res == 1 {
            let n = payload.node(p, 0, 0);
            for c in 0..ch {
                f[c] += n[c];
            }
            continue;
        }
        let corners = [
            (cell.row, cell.col, (1.0 - cell.wr) * (1.0 - cell.wc)),
            (cell.row + 1, cell.col, cell.wr * (1.0 - cell.wc)),
            (cell.row, cell.col + 1, (1.0 - cell.wr) * cell.wc),
            (cell.row + 1, cell.col + 1, cell.wr * cell.wc),
        ];
        for (r, k, w) in corners {
            if w == 0.0 {
                continue;
            }
            let n = payload.node(p, r, k);
            for c in 0..ch {
                f[c] += w * n[c];
            }
        }
    }
    f
}

/// Bilinear tri-plane lookup at `u ∈ [-1, 1]³`.
pub fn sample_triplane(payload: &TriPlanePayload, u: &[f64; 3]) -> [f64; MLP_IN] {
    sample_with_cells(payload, &plane_cells(payload.res(), u))
}

/// Scatters `f_bar` into the payload gradient (same layout as the payload
/// data) and returns the adjoint of `u`.
pub fn sample_backward(
    payload: &TriPlanePayload,
    cells: &[PlaneCell; 3],
    f_bar: &[f64; MLP_IN],
    grad: &mut [f64],
) -> [f64; 3] {
    let res = payload.res();
    let ch = payload.channels().min(MLP_IN);
    let mut u_bar = [0.0; 3];
    for (p, cell) in cells.iter().enumerate() {
        if res == 1 {
            let o = payload.offset(p, 0, 0);
            for c in 0..ch {
                grad[o + c] += f_bar[c];
            }
            continue;
        }
        let corners = [
            (cell.row, cell.col, (1.0 - cell.wr) * (1.0 - cell.wc)),
            (cell.row + 1, cell.col, cell.wr * (1.0 - cell.wc)),
            (cell.row, cell.col + 1, (1.0 - cell.wr) * cell.wc),
            (cell.row + 1, cell.col + 1, cell.wr * cell.wc),
        ];
        // Dot products of each corner node with f_bar.
        let mut dots = [0.0; 4];
        for (k, (r, cc, w)) in corners.iter().enumerate() {
            let o = payload.offset(p, *r, *cc);
            let n = &payload.data()[o..o + ch];
            let mut d = 0.0;
            for c in 0..ch {
                grad[o + c] += w * f_bar[c];
                d += n[c] * f_bar[c];
            }
            dots[k] = d;
        }
        let d_wr = (1.0 - cell.wc) * (dots[1] - dots[0]) + cell.wc * (dots[3] - dots[2]);
        let d_wc = (1.0 - cell.wr) * (dots[2] - dots[0]) + cell.wr * (dots[3] - dots[1]);
        let scale = 0.5 * (res - 1) as f64;
        let (a, b) = PLANE_AXES[p];
        u_bar[a] += d_wr * scale;
        u_bar[b] += d_wc * scale;
    }
    u_bar
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_payload(res: usize, seed: u64) -> TriPlanePayload {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..3 * res * res * 8).map(|_| rng.random_range(-1.0..1.0)).collect();
        TriPlanePayload::from_vec(res, 8, data).unwrap()
    }

    #[test]
    fn zero_payload_gives_zero_feature() {
        let p = TriPlanePayload::zeros(8, 8);
        assert_eq!(sample_triplane(&p, &[0.3, -0.1, 0.9]), [0.0; 8]);
    }

    #[test]
    fn constant_plane_gives_constant_feature() {
        let mut p = TriPlanePayload::zeros(8, 8);
        for r in 0..8 {
            for c in 0..8 {
                p.node_mut(1, r, c).iter_mut().for_each(|v| *v = 0.75);
            }
        }
        for u in [[0.0, 0.0, 0.0], [-1.0, 1.0, 0.3], [0.123, -0.77, 0.999]] {
            let f = sample_triplane(&p, &u);
            for v in f {
                assert_abs_diff_eq!(v, 0.75, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn exact_at_grid_nodes() {
        let p = random_payload(8, 2);
        // Node (i, j, k) of the local lattice sits at u = -1 + 2·idx/7.
        let (i, j, k) = (2usize, 5usize, 7usize);
        let u = [i, j, k].map(|n| -1.0 + 2.0 * n as f64 / 7.0);
        let f = sample_triplane(&p, &u);
        for c in 0..8 {
            let expect = p.node(0, i, j)[c] + p.node(1, i, k)[c] + p.node(2, j, k)[c];
            assert_abs_diff_eq!(f[c], expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_node_payload_is_a_feature_vector() {
        let p = random_payload(1, 3);
        let f1 = sample_triplane(&p, &[0.9, -0.4, 0.1]);
        let f2 = sample_triplane(&p, &[-1.0, 1.0, 0.0]);
        assert_eq!(f1, f2);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let p = random_payload(5, 7);
        let u = [0.31, -0.47, 0.62];
        let f_bar = [0.5, -1.0, 0.25, 0.75, -0.3, 0.9, 0.1, -0.6];
        let obj = |p: &TriPlanePayload, u: &[f64; 3]| {
            let f = sample_triplane(p, u);
            (0..8).map(|c| f[c] * f_bar[c]).sum::<f64>()
        };
        let cells = plane_cells(5, &u);
        let mut grad = vec![0.0; p.len()];
        let ub = sample_backward(&p, &cells, &f_bar, &mut grad);
        let h = 1e-7;
        for a in 0..3 {
            let mut up = u;
            let mut dn = u;
            up[a] += h;
            dn[a] -= h;
            assert_abs_diff_eq!(ub[a], (obj(&p, &up) - obj(&p, &dn)) / (2.0 * h), epsilon = 1e-7);
        }
        for i in (0..p.len()).step_by(5) {
            let mut q = p.clone();
            q.data_mut()[i] += 1.0;
            let lin = obj(&q, &u) - obj(&p, &u);
            assert_abs_diff_eq!(grad[i], lin, epsilon = 1e-12);
        }
    }
}
