/// Dense boolean matrix used as an edge support set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoolMatrix {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl BoolMatrix {
    pub fn new(rows: usize, cols: usize) -> Self {
        BoolMatrix {
            rows,
            cols,
            bits: vec![false; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut m = BoolMatrix::new(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.bits[i * cols + j] = f(i, j);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.bits[i * self.cols + j] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn row_support(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.bits[i * self.cols..(i + 1) * self.cols]
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(j, _)| j)
    }

    pub fn and(&self, other: &BoolMatrix) -> BoolMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        BoolMatrix {
            rows: self.rows,
            cols: self.cols,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a && *b).collect(),
        }
    }

    pub fn or(&self, other: &BoolMatrix) -> BoolMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        BoolMatrix {
            rows: self.rows,
            cols: self.cols,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect(),
        }
    }

    pub fn is_disjoint(&self, other: &BoolMatrix) -> bool {
        self.bits.iter().zip(&other.bits).all(|(a, b)| !(*a && *b))
    }
}
