//! Finite-memory first-order regular perturbation model.
//!
//! The received symbol is `r_n = a_n + j c sum_klm (a_{n+k}^H a_{n+l}) a_{n+m} S_klm`
//! with `c = (8/9) gamma E_s`. Windows into a symbol stream wrap cyclically,
//! matching the cyclic frames produced by the transmitter.

use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::{kernel_count, KernelTensor};
use crate::signal::{DualPolSymbolSeq, Polarization};
use crate::ssfm::MANAKOV_FACTOR;

const J: Complex64 = Complex64::new(0.0, 1.0);
/// Rows per parallel work unit in batch products.
const ROW_CHUNK: usize = 256;

/// The dimensionless prefactor magnitude `(8/9) gamma E_s` (kernels in m/s).
pub fn nonlinear_coefficient(gamma: f64, symbol_energy: f64) -> f64 {
    MANAKOV_FACTOR * gamma * symbol_energy
}

fn wrap(n: i64, len: usize) -> usize {
    n.rem_euclid(len as i64) as usize
}

/// Triplets of the window centered at `center` of `(x, y)`, cyclically, into
/// `out` in canonical order.
fn fill_triplets(
    x: &[Complex64],
    y: &[Complex64],
    center: usize,
    memory: usize,
    pol: Polarization,
    out: &mut [Complex64],
) {
    let w = 2 * memory + 1;
    let len = x.len();
    let base = center as i64 - memory as i64;
    let wx: Vec<Complex64> = (0..w).map(|i| x[wrap(base + i as i64, len)]).collect();
    let wy: Vec<Complex64> = (0..w).map(|i| y[wrap(base + i as i64, len)]).collect();
    let target = match pol {
        Polarization::X => &wx,
        Polarization::Y => &wy,
    };
    let mut idx = 0;
    for k in 0..w {
        let (ckx, cky) = (wx[k].conj(), wy[k].conj());
        for l in 0..w {
            let p = ckx * wx[l] + cky * wy[l];
            for am in target {
                out[idx] = p * am;
                idx += 1;
            }
        }
    }
}

fn check_window(window: &DualPolSymbolSeq, memory: usize) -> Result<()> {
    if window.len() != 2 * memory + 1 {
        return Err(Error::Dimension {
            what: "triplet window length",
            expected: 2 * memory + 1,
            got: window.len(),
        });
    }
    Ok(())
}

/// Triplet vector of a `2M+1` window for one polarization.
pub fn triplets(window: &DualPolSymbolSeq, memory: usize, pol: Polarization) -> Result<Vec<Complex64>> {
    check_window(window, memory)?;
    let mut out = vec![Complex64::new(0.0, 0.0); kernel_count(memory)];
    fill_triplets(&window.x, &window.y, memory, memory, pol, &mut out);
    Ok(out)
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

/// Both received polarizations for the window center.
pub fn predict(
    window: &DualPolSymbolSeq,
    kernels: &KernelTensor,
    gamma: f64,
    symbol_energy: f64,
) -> Result<(Complex64, Complex64)> {
    let memory = kernels.memory();
    check_window(window, memory)?;
    let c = J * nonlinear_coefficient(gamma, symbol_energy);
    let tx = triplets(window, memory, Polarization::X)?;
    let ty = triplets(window, memory, Polarization::Y)?;
    Ok((
        window.x[memory] + c * dot(&tx, kernels.values()),
        window.y[memory] + c * dot(&ty, kernels.values()),
    ))
}

/// Model output for every symbol of a cyclic frame.
pub fn predict_sequence(
    tx: &DualPolSymbolSeq,
    kernels: &KernelTensor,
    gamma: f64,
    symbol_energy: f64,
) -> Result<DualPolSymbolSeq> {
    if tx.is_empty() {
        return Ok(tx.clone());
    }
    let memory = kernels.memory();
    let c = J * nonlinear_coefficient(gamma, symbol_energy);
    let s = kernels.values();
    let out: Vec<(Complex64, Complex64)> = (0..tx.len())
        .into_par_iter()
        .map_init(
            || vec![Complex64::new(0.0, 0.0); s.len()],
            |buf, n| {
                fill_triplets(&tx.x, &tx.y, n, memory, Polarization::X, buf);
                let rx = tx.x[n] + c * dot(buf, s);
                fill_triplets(&tx.x, &tx.y, n, memory, Polarization::Y, buf);
                let ry = tx.y[n] + c * dot(buf, s);
                (rx, ry)
            },
        )
        .collect();
    let (x, y) = out.into_iter().unzip();
    DualPolSymbolSeq::new(x, y)
}

/// Inputs, observed outputs and the `B x L` triplet matrix of one
/// polarization.
#[derive(Clone, Debug, PartialEq)]
pub struct TripletBatch {
    a: Vec<Complex64>,
    r: Vec<Complex64>,
    matrix: Vec<Complex64>,
    memory: usize,
    pol: Polarization,
}

impl TripletBatch {
    /// `matrix` is row-major with `a.len()` rows of `(2M+1)^3` columns.
    pub fn new(
        a: Vec<Complex64>,
        r: Vec<Complex64>,
        matrix: Vec<Complex64>,
        memory: usize,
        pol: Polarization,
    ) -> Result<Self> {
        if r.len() != a.len() {
            return Err(Error::Dimension {
                what: "batch outputs",
                expected: a.len(),
                got: r.len(),
            });
        }
        let cols = kernel_count(memory);
        if matrix.len() != a.len() * cols {
            return Err(Error::Dimension {
                what: "triplet matrix entries",
                expected: a.len() * cols,
                got: matrix.len(),
            });
        }
        Ok(Self {
            a,
            r,
            matrix,
            memory,
            pol,
        })
    }

    /// Rows centered on each of `centers`, with cyclic windows into `tx`
    /// and targets taken from `rx`.
    pub fn from_sequences(
        tx: &DualPolSymbolSeq,
        rx: &DualPolSymbolSeq,
        centers: &[usize],
        memory: usize,
        pol: Polarization,
    ) -> Result<Self> {
        if rx.len() != tx.len() {
            return Err(Error::Dimension {
                what: "received sequence length",
                expected: tx.len(),
                got: rx.len(),
            });
        }
        if let Some(&bad) = centers.iter().find(|&&n| n >= tx.len()) {
            return Err(Error::config(format!(
                "batch center {bad} outside sequence of length {}",
                tx.len()
            )));
        }
        let cols = kernel_count(memory);
        let mut matrix = vec![Complex64::new(0.0, 0.0); centers.len() * cols];
        matrix
            .par_chunks_mut(cols)
            .zip(centers.par_iter())
            .for_each(|(row, &n)| fill_triplets(&tx.x, &tx.y, n, memory, pol, row));
        let a = centers.iter().map(|&n| tx.pol(pol)[n]).collect();
        let r = centers.iter().map(|&n| rx.pol(pol)[n]).collect();
        Self::new(a, r, matrix, memory, pol)
    }

    pub fn rows(&self) -> usize {
        self.a.len()
    }

    pub fn cols(&self) -> usize {
        kernel_count(self.memory)
    }

    pub fn memory(&self) -> usize {
        self.memory
    }

    pub fn polarization(&self) -> Polarization {
        self.pol
    }

    pub fn inputs(&self) -> &[Complex64] {
        &self.a
    }

    pub fn outputs(&self) -> &[Complex64] {
        &self.r
    }

    pub fn row(&self, n: usize) -> &[Complex64] {
        let c = self.cols();
        &self.matrix[n * c..(n + 1) * c]
    }

    fn check_cols(&self, len: usize) -> Result<()> {
        if len != self.cols() {
            return Err(Error::Dimension {
                what: "kernel vector length",
                expected: self.cols(),
                got: len,
            });
        }
        Ok(())
    }

    /// `T s`.
    pub fn matvec(&self, s: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check_cols(s.len())?;
        Ok(self
            .matrix
            .par_chunks(self.cols())
            .map(|row| dot(row, s))
            .collect())
    }

    /// `T^H v`, reduced over fixed row chunks in order so the result does
    /// not depend on scheduling.
    pub fn adjoint_matvec(&self, v: &[Complex64]) -> Result<Vec<Complex64>> {
        if v.len() != self.rows() {
            return Err(Error::Dimension {
                what: "adjoint input length",
                expected: self.rows(),
                got: v.len(),
            });
        }
        let cols = self.cols();
        let partials: Vec<Vec<Complex64>> = self
            .matrix
            .par_chunks(cols * ROW_CHUNK)
            .zip(v.par_chunks(ROW_CHUNK))
            .map(|(rows, vs)| {
                let mut acc = vec![Complex64::new(0.0, 0.0); cols];
                for (row, vn) in rows.chunks(cols).zip(vs) {
                    for (a, t) in acc.iter_mut().zip(row) {
                        *a += t.conj() * vn;
                    }
                }
                acc
            })
            .collect();
        let mut out = vec![Complex64::new(0.0, 0.0); cols];
        for p in partials {
            for (o, v) in out.iter_mut().zip(p) {
                *o += v;
            }
        }
        Ok(out)
    }

    /// `row,a_re,a_im,r_re,r_im,t0_re,t0_im,...` with at most eight triplet
    /// columns.
    pub fn write_debug_csv<W: Write>(&self, writer: W) -> Result<()> {
        let shown = self.cols().min(8);
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![
            "row".to_string(),
            "a_re".into(),
            "a_im".into(),
            "r_re".into(),
            "r_im".into(),
        ];
        for i in 0..shown {
            header.push(format!("t{i}_re"));
            header.push(format!("t{i}_im"));
        }
        w.write_record(&header)?;
        for n in 0..self.rows() {
            let mut rec = vec![
                n.to_string(),
                self.a[n].re.to_string(),
                self.a[n].im.to_string(),
                self.r[n].re.to_string(),
                self.r[n].im.to_string(),
            ];
            for t in &self.row(n)[..shown] {
                rec.push(t.re.to_string());
                rec.push(t.im.to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_memory(batch: &TripletBatch, kernels: &KernelTensor) -> Result<()> {
    if batch.memory() != kernels.memory() {
        return Err(Error::Dimension {
            what: "kernel memory",
            expected: batch.memory(),
            got: kernels.memory(),
        });
    }
    Ok(())
}

/// `a + j c T s` for every row of the batch.
pub fn predict_batch(
    batch: &TripletBatch,
    kernels: &KernelTensor,
    gamma: f64,
    symbol_energy: f64,
) -> Result<Vec<Complex64>> {
    check_memory(batch, kernels)?;
    let c = J * nonlinear_coefficient(gamma, symbol_energy);
    let ts = batch.matvec(kernels.values())?;
    Ok(batch.a.iter().zip(ts).map(|(a, t)| a + c * t).collect())
}

/// Closed-form conditional mean of the model output given center symbol
/// `s`, averaging over i.i.d. zero-mean neighbors of unit energy with
/// `E{A^2} = second_moment`. Exact whenever `E{|A|^2 A} = 0`.
pub fn conditional_mean(
    s: Complex64,
    kernels: &KernelTensor,
    gamma: f64,
    symbol_energy: f64,
    second_moment: Complex64,
) -> Complex64 {
    let c = J * nonlinear_coefficient(gamma, symbol_energy);
    let at = |k: i64, l: i64, m: i64| kernels.values()[crate::kernels::linear_index(kernels.memory(), k, l, m).expect("index within memory")];
    let mut bracket = s * (1.0 + s.norm_sqr()) * at(0, 0, 0);
    let mm = kernels.memory() as i64;
    for k in (-mm..=mm).filter(|&k| k != 0) {
        bracket += s * (2.0 * at(k, k, 0) + at(k, 0, k)) + s.conj() * second_moment * at(0, k, k);
    }
    s + c * bracket
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::make_constellation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_tensor(memory: usize, seed: u64) -> KernelTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..kernel_count(memory))
            .map(|_| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                c(re, im) * 0.05
            })
            .collect();
        KernelTensor::new(memory, values).unwrap()
    }

    fn random_seq(len: usize, seed: u64) -> DualPolSymbolSeq {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DualPolSymbolSeq::random(&make_constellation("16QAM").unwrap(), len, &mut rng)
    }

    #[test]
    fn single_symbol_triplet() {
        let w = DualPolSymbolSeq::new(vec![c(1.0, 0.0)], vec![c(0.0, 0.0)]).unwrap();
        assert_eq!(triplets(&w, 0, Polarization::X).unwrap(), vec![c(1.0, 0.0)]);
        assert_eq!(triplets(&w, 0, Polarization::Y).unwrap(), vec![c(0.0, 0.0)]);
        assert!(triplets(&w, 1, Polarization::X).is_err());
    }

    #[test]
    fn zero_window_gives_zero_triplets() {
        let w = DualPolSymbolSeq::zeros(5);
        assert!(triplets(&w, 2, Polarization::X).unwrap().iter().all(|t| t.norm() == 0.0));
    }

    #[test]
    fn triplets_match_nested_loops() {
        let w = random_seq(3, 1);
        for pol in [Polarization::X, Polarization::Y] {
            let got = triplets(&w, 1, pol).unwrap();
            let target = w.pol(pol);
            let mut expected = Vec::new();
            for k in 0..3 {
                for l in 0..3 {
                    for m in 0..3 {
                        expected.push((w.x[k].conj() * w.x[l] + w.y[k].conj() * w.y[l]) * target[m]);
                    }
                }
            }
            assert_eq!(got, expected);
        }
    }

    #[test]
    fn zero_kernels_or_gamma_are_identity() {
        let w = random_seq(5, 2);
        let zero = KernelTensor::zeros(2);
        assert_eq!(predict(&w, &zero, 1.2e-3, 1e-13).unwrap(), (w.x[2], w.y[2]));
        let t = random_tensor(2, 3);
        assert_eq!(predict(&w, &t, 0.0, 1e-13).unwrap(), (w.x[2], w.y[2]));
    }

    #[test]
    fn memory_zero_hand_expansion() {
        let w = DualPolSymbolSeq::new(vec![c(0.3, -0.7)], vec![c(-1.1, 0.2)]).unwrap();
        let s000 = c(2.0e12, -0.5e12);
        let t = KernelTensor::new(0, vec![s000]).unwrap();
        let (gamma, es) = (1.2e-3, 4e-14);
        let (rx, _) = predict(&w, &t, gamma, es).unwrap();
        let p = w.x[0].norm_sqr() + w.y[0].norm_sqr();
        let expected = w.x[0] + J * (8.0 / 9.0) * gamma * es * p * w.x[0] * s000;
        assert!((rx - expected).norm() < 1e-15);
        assert!(predict(&w, &random_tensor(1, 0), gamma, es).is_err());
    }

    #[test]
    fn phase_rotation_equivariance() {
        let w = random_seq(7, 4);
        let t = random_tensor(3, 5);
        let rot = Complex64::cis(0.7);
        let (x0, y0) = predict(&w, &t, 1.0, 1.0).unwrap();
        let (x1, y1) = predict(&w.scaled(rot), &t, 1.0, 1.0).unwrap();
        assert!((x1 - rot * x0).norm() < 1e-12);
        assert!((y1 - rot * y0).norm() < 1e-12);
    }

    #[test]
    fn batch_matches_row_predictions() {
        let tx = random_seq(40, 6);
        let t = random_tensor(2, 7);
        let centers: Vec<usize> = (0..40).collect();
        for pol in [Polarization::X, Polarization::Y] {
            let batch = TripletBatch::from_sequences(&tx, &tx, &centers, 2, pol).unwrap();
            let batched = predict_batch(&batch, &t, 1.0, 1.0).unwrap();
            let full = predict_sequence(&tx, &t, 1.0, 1.0).unwrap();
            for (n, r) in batched.iter().enumerate() {
                let window = cyclic_window(&tx, n, 2);
                let (px, py) = predict(&window, &t, 1.0, 1.0).unwrap();
                let expected = if pol == Polarization::X { px } else { py };
                assert!((r - expected).norm() < 1e-12);
                assert!((full.pol(pol)[n] - expected).norm() < 1e-12);
            }
        }
    }

    fn cyclic_window(seq: &DualPolSymbolSeq, n: usize, memory: usize) -> DualPolSymbolSeq {
        let len = seq.len() as i64;
        let idx: Vec<usize> = (-(memory as i64)..=memory as i64)
            .map(|k| (n as i64 + k).rem_euclid(len) as usize)
            .collect();
        DualPolSymbolSeq::new(idx.iter().map(|&i| seq.x[i]).collect(), idx.iter().map(|&i| seq.y[i]).collect()).unwrap()
    }

    #[test]
    fn three_row_batch_shape() {
        let tx = random_seq(3, 8);
        let batch = TripletBatch::from_sequences(&tx, &tx, &[0, 1, 2], 1, Polarization::X).unwrap();
        assert_eq!((batch.rows(), batch.cols()), (3, 27));
        let t = random_tensor(1, 9);
        assert_eq!(predict_batch(&batch, &t, 1.0, 1.0).unwrap().len(), 3);
        assert!(predict_batch(&batch, &random_tensor(2, 9), 1.0, 1.0).is_err());
        assert!(TripletBatch::from_sequences(&tx, &tx, &[3], 1, Polarization::X).is_err());
    }

    #[test]
    fn adjoint_is_conjugate_transpose() {
        let tx = random_seq(600, 10);
        let centers: Vec<usize> = (0..600).collect();
        let batch = TripletBatch::from_sequences(&tx, &tx, &centers, 1, Polarization::Y).unwrap();
        let v = random_seq(600, 11).x;
        let s = random_tensor(1, 12);
        let lhs: Complex64 = batch.matvec(s.values()).unwrap().iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
        let g = batch.adjoint_matvec(&v).unwrap();
        let rhs: Complex64 = s.values().iter().zip(&g).map(|(a, b)| a.conj() * b).sum();
        assert!((lhs - rhs).norm() < 1e-10 * lhs.norm());
    }

    #[test]
    fn debug_csv_layout() {
        let tx = random_seq(4, 13);
        let batch = TripletBatch::from_sequences(&tx, &tx, &[0, 1], 1, Polarization::X).unwrap();
        let mut buf = Vec::new();
        batch.write_debug_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(header.split(',').count(), 5 + 16);
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn conditional_mean_limits() {
        let t = random_tensor(2, 14);
        let s = c(0.9, -0.3);
        assert!((conditional_mean(s, &t, 1.2e-3, 0.0, c(0.0, 0.0)) - s).norm() < 1e-15);
        let t0 = t.restrict(0).unwrap();
        let expected = s + J * 0.5 * s * (1.0 + s.norm_sqr()) * t0.values()[0];
        let got = conditional_mean(s, &t0, 1.0, 0.5 * 9.0 / 8.0, c(0.0, 0.0));
        assert!((got - expected).norm() < 1e-14);
    }

    /// Averages the model over random neighbors and compares with the
    /// closed form for both a square QAM and a constellation with nonzero
    /// `E{A^2}`, which exercises the conjugate term.
    #[test]
    fn conditional_mean_matches_monte_carlo() {
        let t = random_tensor(2, 15);
        let bpsk = crate::signal::Constellation::new("BPSK", vec![c(1.0, 0.0), c(-1.0, 0.0)]).unwrap();
        for constellation in [make_constellation("16QAM").unwrap(), bpsk] {
            let m2 = constellation.second_moment();
            let mut rng = ChaCha8Rng::seed_from_u64(16);
            let draws = 20_000;
            for &s in constellation.points().iter().take(3) {
                let mut sum = c(0.0, 0.0);
                let mut sum_sq = 0.0;
                for _ in 0..draws {
                    let mut w = DualPolSymbolSeq::random(&constellation, 5, &mut rng);
                    w.x[2] = s;
                    let (r, _) = predict(&w, &t, 1.0, 1.0).unwrap();
                    sum += r;
                    sum_sq += r.norm_sqr();
                }
                let mean = sum / draws as f64;
                let var = sum_sq / draws as f64 - mean.norm_sqr();
                let se = (var / draws as f64).sqrt();
                let closed = conditional_mean(s, &t, 1.0, 1.0, m2);
                assert!((mean - closed).norm() < 4.0 * se, "{mean} vs {closed}, se {se}");
            }
        }
    }
}
