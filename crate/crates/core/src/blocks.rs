//! Invariant block structure of a Lindblad evolution.
//!
//! Basis states are grouped into classes such that the state stays block
//! diagonal over them at all times: the drift never couples two classes and
//! every jump operator maps a whole class into a single class. Only the
//! diagonal blocks are then stored and integrated.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::sparse::CsrMatrix;

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra.max(rb)] = ra.min(rb);
        true
    }
}

struct Jump {
    src: usize,
    dst: usize,
    op: CsrMatrix,
}

pub(crate) struct BlockPlan {
    n: usize,
    members: Vec<Vec<usize>>,
    offsets: Vec<usize>,
    drift: Vec<CsrMatrix>,
    jumps: Vec<Jump>,
    tmp: Vec<C64>,
    tmp_adj: Vec<C64>,
}

impl BlockPlan {
    /// `drift` and `jumps` as in `dρ/dt = Gρ + ρG† + Σ LρL†`; `rho0` is the
    /// column-major initial state.
    pub(crate) fn new(drift: &CsrMatrix, jumps: &[CsrMatrix], rho0: &[C64]) -> Self {
        let n = drift.nrows();
        let mut uf = UnionFind::new(n);
        for j in 0..n {
            for i in 0..n {
                if rho0[i + j * n] != C64::new(0.0, 0.0) {
                    uf.union(i, j);
                }
            }
        }
        for (k, i, _) in drift.iter() {
            uf.union(k, i);
        }
        loop {
            let mut changed = false;
            for l in jumps {
                let mut image: Vec<Option<usize>> = vec![None; n];
                for (k, i, _) in l.iter() {
                    let r = uf.find(i);
                    match image[r] {
                        None => image[r] = Some(k),
                        Some(first) => changed |= uf.union(first, k),
                    }
                }
            }
            if !changed {
                break;
            }
        }

        let mut class_of = vec![usize::MAX; n];
        let mut members: Vec<Vec<usize>> = Vec::new();
        let mut pos = vec![0usize; n];
        for i in 0..n {
            let r = uf.find(i);
            if class_of[r] == usize::MAX {
                class_of[r] = members.len();
                members.push(Vec::new());
            }
            let c = class_of[r];
            class_of[i] = c;
            pos[i] = members[c].len();
            members[c].push(i);
        }

        let mut offsets = vec![0usize];
        for m in &members {
            offsets.push(offsets.last().unwrap() + m.len() * m.len());
        }

        let drift_blocks = members
            .iter()
            .enumerate()
            .map(|(c, m)| {
                let entries = drift
                    .iter()
                    .filter(|&(_, i, _)| class_of[i] == c)
                    .map(|(k, i, v)| (pos[k], pos[i], v));
                CsrMatrix::from_triplets(m.len(), m.len(), entries)
            })
            .collect();

        let mut jump_blocks = Vec::new();
        for l in jumps {
            for (src, m_src) in members.iter().enumerate() {
                let entries: Vec<_> = l.iter().filter(|&(_, i, _)| class_of[i] == src).collect();
                let Some(&(k0, _, _)) = entries.first() else { continue };
                let dst = class_of[k0];
                debug_assert!(entries.iter().all(|&(k, _, _)| class_of[k] == dst));
                let op = CsrMatrix::from_triplets(
                    members[dst].len(),
                    m_src.len(),
                    entries.into_iter().map(|(k, i, v)| (pos[k], pos[i], v)),
                );
                jump_blocks.push(Jump { src, dst, op });
            }
        }

        let largest = members.iter().map(Vec::len).max().unwrap_or(0);
        Self {
            n,
            members,
            offsets,
            drift: drift_blocks,
            jumps: jump_blocks,
            tmp: vec![C64::new(0.0, 0.0); largest * largest],
            tmp_adj: vec![C64::new(0.0, 0.0); largest * largest],
        }
    }

    pub(crate) fn packed_len(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    #[cfg(test)]
    pub(crate) fn block_sizes(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }

    pub(crate) fn pack(&self, full: &[C64]) -> Vec<C64> {
        let mut y = vec![C64::new(0.0, 0.0); self.packed_len()];
        for (c, m) in self.members.iter().enumerate() {
            let block = &mut y[self.offsets[c]..self.offsets[c + 1]];
            for (b, &j) in m.iter().enumerate() {
                for (a, &i) in m.iter().enumerate() {
                    block[a + b * m.len()] = full[i + j * self.n];
                }
            }
        }
        y
    }

    pub(crate) fn unpack(&self, y: &[C64]) -> DMatrix<C64> {
        let mut full = DMatrix::zeros(self.n, self.n);
        for (c, m) in self.members.iter().enumerate() {
            let block = &y[self.offsets[c]..self.offsets[c + 1]];
            for (b, &j) in m.iter().enumerate() {
                for (a, &i) in m.iter().enumerate() {
                    full[(i, j)] = block[a + b * m.len()];
                }
            }
        }
        full
    }

    /// Only right multiplications by adjoints are used, since they run as
    /// contiguous column updates. With ρ Hermitian, `Gρ = (ρG†)†` and
    /// `LρL† = (ρL†)† L†`.
    pub(crate) fn rhs(&mut self, y: &[C64], dy: &mut [C64]) {
        for (c, g) in self.drift.iter().enumerate() {
            let m = self.members[c].len();
            let range = self.offsets[c]..self.offsets[c + 1];
            let x = &mut self.tmp[..m * m];
            x.fill(C64::new(0.0, 0.0));
            g.add_mul_adjoint_right(&y[range.clone()], m, x);
            let out = &mut dy[range];
            for j in 0..m {
                for i in 0..m {
                    out[i + j * m] = x[i + j * m] + x[j + i * m].conj();
                }
            }
        }
        for jump in &self.jumps {
            let m_src = self.members[jump.src].len();
            let m_dst = self.members[jump.dst].len();
            let t = &mut self.tmp[..m_src * m_dst];
            t.fill(C64::new(0.0, 0.0));
            jump.op.add_mul_adjoint_right(&y[self.offsets[jump.src]..self.offsets[jump.src + 1]], m_src, t);
            let tt = &mut self.tmp_adj[..m_dst * m_src];
            for j in 0..m_dst {
                for i in 0..m_src {
                    tt[j + i * m_dst] = t[i + j * m_src].conj();
                }
            }
            jump.op.add_mul_adjoint_right(
                tt,
                m_dst,
                &mut dy[self.offsets[jump.dst]..self.offsets[jump.dst + 1]],
            );
        }
    }

    /// Replaces every block by its Hermitian part.
    pub(crate) fn symmetrize(&self, y: &mut [C64]) {
        for (c, m) in self.members.iter().enumerate() {
            let m = m.len();
            let block = &mut y[self.offsets[c]..self.offsets[c + 1]];
            for j in 0..m {
                block[j + j * m].im = 0.0;
                for i in 0..j {
                    let avg = (block[i + j * m] + block[j + i * m].conj()) * 0.5;
                    block[i + j * m] = avg;
                    block[j + i * m] = avg.conj();
                }
            }
        }
    }
}
