use super::{ChannelError, PathComponent};
use crate::geometry::Point3;
use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UlaConfig {
    pub n_antennas: usize,
    /// Element spacing in wavelengths.
    pub spacing: f64,
}

impl Default for UlaConfig {
    fn default() -> Self {
        Self {
            n_antennas: 8,
            spacing: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfdmConfig {
    pub n_subcarriers: usize,
    pub center_freq: f64,
    pub bandwidth: f64,
}

impl Default for OfdmConfig {
    fn default() -> Self {
        Self {
            n_subcarriers: 64,
            center_freq: 5.8e9,
            bandwidth: 20e6,
        }
    }
}

impl OfdmConfig {
    pub fn subcarrier_freq(&self, n: usize) -> f64 {
        self.center_freq - self.bandwidth / 2.0 + n as f64 * self.bandwidth / self.n_subcarriers as f64
    }
}

/// Spatial-frequency CSI. Row `n` holds `h̃_nᴴ`, the conjugated channel
/// vector of subcarrier `n`, so `h_tilde` is `N'c × Nt`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelMatrix {
    pub h_tilde: Array2<Complex64>,
    pub center_freq: f64,
    pub bandwidth: f64,
    pub ue_position: Point3,
    pub scene_id: u32,
}

impl ChannelMatrix {
    pub fn subcarriers(&self) -> usize {
        self.h_tilde.nrows()
    }

    pub fn antennas(&self) -> usize {
        self.h_tilde.ncols()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.h_tilde.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn with_origin(mut self, scene_id: u32, ue_position: Point3) -> Self {
        self.scene_id = scene_id;
        self.ue_position = ue_position;
        self
    }
}

/// Sums the paths into `N'c × Nt` CSI:
/// `h̃_n[t] = Σ_p g_p · exp(-j2π f_n τ_p) · exp(-j2π·spacing·t·sin θ_p)`,
/// stored conjugated per subcarrier row.
pub fn assemble_channel(paths: &[PathComponent], array: &UlaConfig, ofdm: &OfdmConfig) -> Result<ChannelMatrix, ChannelError> {
    if paths.is_empty() {
        return Err(ChannelError::NoPaths);
    }
    if array.n_antennas == 0 || ofdm.n_subcarriers == 0 {
        return Err(ChannelError::InvalidConfig("array and subcarrier counts must be positive".into()));
    }
    let (nc, nt) = (ofdm.n_subcarriers, array.n_antennas);
    let mut h = Array2::<Complex64>::zeros((nc, nt));
    for p in paths {
        let steer: Vec<Complex64> = (0..nt)
            .map(|t| Complex64::from_polar(1.0, -2.0 * PI * array.spacing * t as f64 * p.aod_azimuth.sin()))
            .collect();
        for n in 0..nc {
            let f = ofdm.subcarrier_freq(n);
            let g = p.complex_gain * Complex64::from_polar(1.0, -2.0 * PI * f * p.delay);
            for t in 0..nt {
                h[[n, t]] += (g * steer[t]).conj();
            }
        }
    }
    Ok(ChannelMatrix {
        h_tilde: h,
        center_freq: ofdm.center_freq,
        bandwidth: ofdm.bandwidth,
        ue_position: Point3::new(0.0, 0.0, 0.0),
        scene_id: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(gain: Complex64, delay: f64, aod: f64) -> PathComponent {
        PathComponent {
            delay,
            complex_gain: gain,
            aod_azimuth: aod,
            n_reflections: 0,
            n_diffractions: 0,
            is_los: true,
            vertices: vec![],
        }
    }

    #[test]
    fn unit_broadside_path_is_all_ones() {
        let ch = assemble_channel(&[path(Complex64::new(1.0, 0.0), 0.0, 0.0)], &UlaConfig::default(), &OfdmConfig::default()).unwrap();
        assert_eq!(ch.h_tilde.dim(), (64, 8));
        assert!(ch.h_tilde.iter().all(|c| (c - Complex64::new(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn empty_path_list_is_an_error() {
        assert!(matches!(
            assemble_channel(&[], &UlaConfig::default(), &OfdmConfig::default()),
            Err(ChannelError::NoPaths)
        ));
    }

    #[test]
    fn single_delay_is_a_complex_exponential_over_subcarriers() {
        let ofdm = OfdmConfig::default();
        let tau = 37e-9;
        let ch = assemble_channel(&[path(Complex64::new(0.5, 0.0), tau, 0.3)], &UlaConfig::default(), &ofdm).unwrap();
        let step = 2.0 * PI * tau * ofdm.bandwidth / ofdm.n_subcarriers as f64;
        for t in 0..8 {
            for n in 1..64 {
                // conjugated row stacking: phase advances by +step per subcarrier
                let ratio = ch.h_tilde[[n, t]] / ch.h_tilde[[n - 1, t]];
                assert!((ratio - Complex64::from_polar(1.0, step)).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn two_path_comb() {
        let ofdm = OfdmConfig::default();
        let k = 3.0;
        let tau = 20e-9;
        let dtau = k / ofdm.bandwidth;
        let paths = [path(Complex64::new(1.0, 0.0), tau, 0.0), path(Complex64::new(1.0, 0.0), tau + dtau, 0.0)];
        let ch = assemble_channel(&paths, &UlaConfig::default(), &ofdm).unwrap();
        for n in 0..64 {
            let f = ofdm.subcarrier_freq(n);
            let expected = (Complex64::new(1.0, 0.0) + Complex64::from_polar(1.0, -2.0 * PI * dtau * f)).norm();
            assert!((ch.h_tilde[[n, 0]].norm() - expected).abs() < 1e-9);
        }
    }
}
