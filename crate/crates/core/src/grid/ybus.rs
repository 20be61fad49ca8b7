use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{GridError, Network};

/// Nodal admittance matrix, rows and columns in `Network::buses` order.
#[derive(Debug, Clone, PartialEq)]
pub struct YBus {
    ids: Vec<u32>,
    matrix: DMatrix<Complex64>,
}

impl YBus {
    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn dim(&self) -> usize {
        self.ids.len()
    }

    pub fn index(&self, id: u32) -> Option<usize> {
        self.ids.iter().position(|&b| b == id)
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    /// Entry for a pair of bus ids.
    pub fn get(&self, from: u32, to: u32) -> Option<Complex64> {
        Some(self.matrix[(self.index(from)?, self.index(to)?)])
    }

    /// `[G, −B; B, G]`, acting on `[Vr; Vi]` to give `[Ir; Ii]`.
    pub fn real_split(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(2 * n, 2 * n, |r, c| {
            let y = self.matrix[(r % n, c % n)];
            match (r < n, c < n) {
                (true, true) | (false, false) => y.re,
                (true, false) => -y.im,
                (false, true) => y.im,
            }
        })
    }

    /// `Y·V` for phasors in bus order.
    pub fn currents(&self, v: &[Complex64]) -> Vec<Complex64> {
        let n = self.dim();
        (0..n)
            .map(|r| (0..n).map(|c| self.matrix[(r, c)] * v[c]).sum())
            .collect()
    }
}

pub fn build_ybus(network: &Network) -> Result<YBus, GridError> {
    let n = network.buses.len();
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    let idx = |element: String, bus: u32| {
        network.bus_index(bus).ok_or(GridError::UnknownBus { element, bus })
    };
    for (k, b) in network.buses.iter().enumerate() {
        y[(k, k)] += b.shunt();
    }
    for br in &network.branches {
        if br.r == 0.0 && br.x == 0.0 {
            return Err(GridError::InvalidParameter {
                element: format!("branch {}", br.id),
                reason: "zero series impedance".into(),
            });
        }
        let (f, t) = (idx(format!("branch {}", br.id), br.from)?, idx(format!("branch {}", br.id), br.to)?);
        let ys = br.series_admittance();
        y[(f, f)] += ys + br.shunt_from();
        y[(t, t)] += ys + br.shunt_to();
        y[(f, t)] -= ys;
        y[(t, f)] -= ys;
    }
    for tr in &network.transformers {
        let name = format!("transformer {}", tr.id);
        if tr.r == 0.0 && tr.x == 0.0 {
            return Err(GridError::InvalidParameter {
                element: name,
                reason: "zero series impedance".into(),
            });
        }
        let (f, t) = (idx(name.clone(), tr.from)?, idx(name, tr.to)?);
        let ys = tr.admittance();
        y[(f, f)] += ys / (tr.n * tr.n);
        y[(t, t)] += ys;
        y[(f, t)] -= ys / tr.n;
        y[(t, f)] -= ys / tr.n;
    }
    Ok(YBus {
        ids: network.buses.iter().map(|b| b.id).collect(),
        matrix: y,
    })
}
