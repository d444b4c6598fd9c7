use nalgebra::DMatrix;

use super::{Complex64, NetworkModel};
use crate::error::Result;

/// Dense nodal admittance matrix, rows/columns ordered like `NetworkModel::buses`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    pub matrix: DMatrix<Complex64>,
}

impl AdmittanceMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn get(&self, a: usize, b: usize) -> Complex64 {
        self.matrix[(a, b)]
    }

    /// Nodal current injections `i = Y v`.
    pub fn injections(&self, voltages: &[Complex64]) -> Vec<Complex64> {
        let n = self.dim();
        (0..n)
            .map(|a| (0..n).map(|b| self.matrix[(a, b)] * voltages[b]).sum())
            .collect()
    }
}

/// Assembles Y at nominal frequency from the Π-equivalents of all branches.
pub fn build_admittance(network: &NetworkModel) -> Result<AdmittanceMatrix> {
    let n = network.buses.len();
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for br in &network.branches {
        let ys = br.series_admittance()?;
        let shunt = Complex64::new(0.0, br.b / 2.0);
        let f = network.index_of(br.from).expect("validated");
        let t = network.index_of(br.to).expect("validated");
        let tap = br.tap;
        y[(f, f)] += (ys + shunt) / (tap * tap);
        y[(t, t)] += ys + shunt;
        y[(f, t)] -= ys / tap;
        y[(t, f)] -= ys / tap;
    }
    Ok(AdmittanceMatrix { matrix: y })
}
