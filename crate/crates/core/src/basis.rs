//! Storage of localized basis functions and the `LODB` cache format.
//!
//! Every function is kept as a dense block of values over the lattice points
//! of a rectangle of coarse elements; outside that rectangle it vanishes.
//!
//! # `LODB` layout (little-endian)
//!
//! ```text
//! magic    "LODB"
//! version  u32 (= 1)
//! metadata mode u8 (0 = CG, 1 = DG), complex u8, p u32, ell u32, q u32,
//!          n_coarse u32, ratio u32, J u64,
//!          then J element boxes as 4 × u32 (x0, x1, y0, y1)
//! records  J times: count u64, count × u64 lattice indices,
//!          count values (f64, or re/im f64 pairs when complex)
//! ```
//!
//! Records list the non-zero values of each function in ascending lattice
//! order.

use std::io::{Read, Write};

use num_complex::Complex64;

use crate::constraints::Mode;
use crate::error::{Error, Result};
use crate::grid::{ElementBox, Lattice, LatticeBox};
use crate::linalg::Scalar;
use crate::par::{self, Parallelism};

const MAGIC: &[u8; 4] = b"LODB";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct BasisFunction<S> {
    /// Coarse elements outside of which the function vanishes.
    pub elements: ElementBox,
    /// Lattice closure of `elements`; `values` is row-major over it.
    pub support: LatticeBox,
    pub values: Vec<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LodBasis<S> {
    pub mode: Mode,
    pub p: usize,
    pub ell: usize,
    pub lattice: Lattice,
    pub functions: Vec<BasisFunction<S>>,
}

impl<S: Scalar> LodBasis<S> {
    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    /// `φ_j` at every lattice point.
    pub fn to_fine(&self, j: usize) -> Vec<S> {
        let mut out = vec![S::zero(); self.lattice.len()];
        let f = &self.functions[j];
        for ((a, b), &v) in f.support.points().zip(&f.values) {
            out[self.lattice.index(a, b)] = v;
        }
        out
    }

    /// `Σ_j c_j φ_j`
    pub fn combine(&self, c: &[S]) -> Vec<S> {
        assert_eq!(
            c.len(),
            self.len(),
            "coefficient count must match the basis size"
        );
        let mut out = vec![S::zero(); self.lattice.len()];
        let side = self.lattice.side();
        for (f, &cj) in self.functions.iter().zip(c) {
            if cj == S::zero() {
                continue;
            }
            let w = f.support.width();
            for (row, b) in (f.support.b0..=f.support.b1).enumerate() {
                let dst = &mut out[b * side + f.support.a0..][..w];
                for (o, &v) in dst.iter_mut().zip(&f.values[row * w..][..w]) {
                    *o += cj * v;
                }
            }
        }
        out
    }

    /// `(Σ_k φ_j[k] v[k])_j` without conjugation.
    pub fn project(&self, v: &[S], par: Parallelism) -> Vec<S> {
        assert_eq!(
            v.len(),
            self.lattice.len(),
            "vector must live on the fine lattice"
        );
        let side = self.lattice.side();
        par::map(par, &self.functions, |f| {
            let w = f.support.width();
            let mut acc = S::zero();
            for (row, b) in (f.support.b0..=f.support.b1).enumerate() {
                let src = &v[b * side + f.support.a0..][..w];
                for (&x, &y) in src.iter().zip(&f.values[row * w..][..w]) {
                    acc += x * y;
                }
            }
            acc
        })
    }

    /// Number of stored values.
    pub fn stored_len(&self) -> usize {
        self.functions.iter().map(|f| f.values.len()).sum()
    }
}

/// Value codec for the `LODB` records.
pub trait LodbScalar: Scalar {
    fn write_le(self, w: &mut impl Write) -> std::io::Result<()>;
    fn read_le(r: &mut impl Read) -> std::io::Result<Self>;
}

impl LodbScalar for f64 {
    fn write_le(self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(&self.to_le_bytes())
    }
    fn read_le(r: &mut impl Read) -> std::io::Result<Self> {
        read_f64(r)
    }
}

impl LodbScalar for Complex64 {
    fn write_le(self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(&self.re.to_le_bytes())?;
        w.write_all(&self.im.to_le_bytes())
    }
    fn read_le(r: &mut impl Read) -> std::io::Result<Self> {
        Ok(Complex64::new(read_f64(r)?, read_f64(r)?))
    }
}

fn read_f64(r: &mut impl Read) -> std::io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_u8(r: &mut impl Read) -> std::io::Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

impl<S: LodbScalar> LodBasis<S> {
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&[u8::from(self.mode == Mode::Dg), u8::from(S::IS_COMPLEX)])?;
        for v in [
            self.p,
            self.ell,
            self.lattice.q,
            self.lattice.n_coarse,
            self.lattice.ratio,
        ] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for f in &self.functions {
            for v in [f.elements.x0, f.elements.x1, f.elements.y0, f.elements.y1] {
                w.write_all(&(v as u32).to_le_bytes())?;
            }
        }
        for f in &self.functions {
            let entries: Vec<(usize, S)> = f
                .support
                .points()
                .zip(&f.values)
                .filter(|(_, &v)| v != S::zero())
                .map(|((a, b), &v)| (self.lattice.index(a, b), v))
                .collect();
            w.write_all(&(entries.len() as u64).to_le_bytes())?;
            for &(k, _) in &entries {
                w.write_all(&(k as u64).to_le_bytes())?;
            }
            for &(_, v) in &entries {
                v.write_le(w)?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("missing LODB magic bytes".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported LODB version {version}")));
        }
        let mode = match read_u8(r)? {
            0 => Mode::Cg,
            1 => Mode::Dg,
            other => return Err(Error::Format(format!("unknown mode tag {other}"))),
        };
        if (read_u8(r)? != 0) != S::IS_COMPLEX {
            return Err(Error::Format(
                "scalar field of the file does not match".into(),
            ));
        }
        let mut meta = [0usize; 5];
        for m in &mut meta {
            *m = read_u32(r)? as usize;
        }
        let [p, ell, q, n_coarse, ratio] = meta;
        if q == 0 || n_coarse == 0 || ratio == 0 {
            return Err(Error::Format("degenerate lattice in metadata".into()));
        }
        let lattice = Lattice {
            q,
            ratio,
            n_coarse,
            n_fine: n_coarse * ratio,
        };
        let count = read_u64(r)? as usize;
        let s = lattice.per_coarse();
        let mut boxes = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let mut v = [0usize; 4];
            for x in &mut v {
                *x = read_u32(r)? as usize;
            }
            let e = ElementBox {
                x0: v[0],
                x1: v[1],
                y0: v[2],
                y1: v[3],
            };
            if e.x0 > e.x1 || e.y0 > e.y1 || e.x1 >= n_coarse || e.y1 >= n_coarse {
                return Err(Error::Format("element box outside the mesh".into()));
            }
            boxes.push(e);
        }
        let mut functions = Vec::with_capacity(boxes.len());
        for elements in boxes {
            let support = LatticeBox {
                a0: elements.x0 * s,
                a1: (elements.x1 + 1) * s,
                b0: elements.y0 * s,
                b1: (elements.y1 + 1) * s,
            };
            let nnz = read_u64(r)? as usize;
            if nnz > support.len() {
                return Err(Error::Format(
                    "record has more entries than its support".into(),
                ));
            }
            let mut idx = Vec::with_capacity(nnz);
            for _ in 0..nnz {
                idx.push(read_u64(r)? as usize);
            }
            let mut values = vec![S::zero(); support.len()];
            for &k in &idx {
                let v = S::read_le(r)?;
                if k >= lattice.len() {
                    return Err(Error::Format(format!("lattice index {k} out of range")));
                }
                let (a, b) = lattice.coords(k);
                if !support.contains(a, b) {
                    return Err(Error::Format(format!(
                        "lattice index {k} outside its support"
                    )));
                }
                values[support.offset(a, b)] = v;
            }
            functions.push(BasisFunction {
                elements,
                support,
                values,
            });
        }
        Ok(Self {
            mode,
            p,
            ell,
            lattice,
            functions,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> LodBasis<f64> {
        let lattice = Lattice {
            q: 1,
            ratio: 2,
            n_coarse: 2,
            n_fine: 4,
        };
        let elements = ElementBox {
            x0: 0,
            x1: 0,
            y0: 0,
            y1: 1,
        };
        let support = LatticeBox {
            a0: 0,
            a1: 2,
            b0: 0,
            b1: 4,
        };
        let values = (0..support.len())
            .map(|k| if k % 4 == 0 { 0.0 } else { k as f64 * 0.5 })
            .collect();
        LodBasis {
            mode: Mode::Dg,
            p: 1,
            ell: 2,
            lattice,
            functions: vec![BasisFunction {
                elements,
                support,
                values,
            }],
        }
    }

    #[test]
    fn round_trip() {
        let b = sample();
        let mut buf = Vec::new();
        b.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"LODB");
        let back = LodBasis::<f64>::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, b);
        assert!(LodBasis::<Complex64>::read_from(&mut buf.as_slice()).is_err());
        buf[0] = b'X';
        assert!(LodBasis::<f64>::read_from(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn combine_and_project_are_adjoint() {
        let b = sample();
        let c = [1.5];
        let u = b.combine(&c);
        let v: Vec<f64> = (0..b.lattice.len()).map(|k| (k as f64).cos()).collect();
        let lhs: f64 = u.iter().zip(&v).map(|(x, y)| x * y).sum();
        let rhs = c[0] * b.project(&v, Parallelism::Sequential)[0];
        assert!((lhs - rhs).abs() < 1e-12);
        assert_eq!(b.to_fine(0), b.combine(&[1.0]));
    }
}
