//! Connected-component labeling on 2D binary images.

use std::collections::VecDeque;

use ndarray::Array2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
            Connectivity::Eight => &[
                (-1, -1),
                (-1, 0),
                (-1, 1),
                (0, -1),
                (0, 1),
                (1, -1),
                (1, 0),
                (1, 1),
            ],
        }
    }
}

/// Summary of one connected component.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    /// Label value in the label image (1-based).
    pub label: u32,
    pub size: usize,
    /// Sum of the row (axis 0) and column (axis 1) indices of all member pixels.
    pub index_sum: [u64; 2],
    pub touches_border: bool,
}

impl Component {
    /// Mean (axis 0, axis 1) index of the member pixels.
    pub fn centroid(&self) -> [f64; 2] {
        let n = self.size as f64;
        [self.index_sum[0] as f64 / n, self.index_sum[1] as f64 / n]
    }
}

/// Labels the `true` pixels of `mask`. Labels are assigned in raster order of
/// each component's first pixel; background is 0.
pub fn label(mask: &Array2<bool>, connectivity: Connectivity) -> (Array2<u32>, Vec<Component>) {
    let (h, w) = mask.dim();
    let mut labels = Array2::<u32>::zeros((h, w));
    let mut comps = Vec::new();
    let mut queue = VecDeque::new();
    for i in 0..h {
        for j in 0..w {
            if !mask[[i, j]] || labels[[i, j]] != 0 {
                continue;
            }
            let id = comps.len() as u32 + 1;
            let mut comp = Component {
                label: id,
                size: 0,
                index_sum: [0, 0],
                touches_border: false,
            };
            labels[[i, j]] = id;
            queue.push_back((i, j));
            while let Some((r, c)) = queue.pop_front() {
                comp.size += 1;
                comp.index_sum[0] += r as u64;
                comp.index_sum[1] += c as u64;
                if r == 0 || c == 0 || r + 1 == h || c + 1 == w {
                    comp.touches_border = true;
                }
                for &(dr, dc) in connectivity.offsets() {
                    let (nr, nc) = (r as isize + dr, c as isize + dc);
                    if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                        continue;
                    }
                    let (nr, nc) = (nr as usize, nc as usize);
                    if mask[[nr, nc]] && labels[[nr, nc]] == 0 {
                        labels[[nr, nc]] = id;
                        queue.push_back((nr, nc));
                    }
                }
            }
            comps.push(comp);
        }
    }
    (labels, comps)
}
