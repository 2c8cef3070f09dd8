#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

/// Connected-component labelling of a boolean mask.
#[derive(Debug, Clone)]
pub struct Labels {
    pub width: usize,
    pub height: usize,
    /// 0 for unset pixels, otherwise the 1-based component id.
    pub labels: Vec<usize>,
    /// Pixel count per component; index 0 is unused.
    pub sizes: Vec<usize>,
}

impl Labels {
    pub fn count(&self) -> usize {
        self.sizes.len() - 1
    }

    /// Id of the component with the most pixels.
    pub fn largest(&self) -> Option<usize> {
        (1..self.sizes.len()).max_by_key(|&i| (self.sizes[i], std::cmp::Reverse(i)))
    }

    /// Unweighted centroid (column, row) of component `id`.
    pub fn centroid(&self, id: usize) -> (f64, f64) {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
        for (i, &l) in self.labels.iter().enumerate() {
            if l == id {
                sx += (i % self.width) as f64;
                sy += (i / self.width) as f64;
                n += 1.0;
            }
        }
        (sx / n, sy / n)
    }

    /// Whether component `id` has a pixel on the image border.
    pub fn touches_border(&self, id: usize) -> bool {
        let (w, h) = (self.width, self.height);
        self.labels.iter().enumerate().any(|(i, &l)| {
            l == id && {
                let (c, r) = (i % w, i / w);
                c == 0 || r == 0 || c == w - 1 || r == h - 1
            }
        })
    }
}

/// Flood-fill labelling; components are numbered in raster order of their first pixel.
pub fn label_regions(mask: &[bool], width: usize, height: usize, conn: Connectivity) -> Labels {
    let mut labels = vec![0usize; mask.len()];
    let mut sizes = vec![0usize];
    let mut stack = Vec::new();
    let offsets: &[(isize, isize)] = match conn {
        Connectivity::Four => &[(1, 0), (-1, 0), (0, 1), (0, -1)],
        Connectivity::Eight => &[(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)],
    };
    for start in 0..mask.len() {
        if !mask[start] || labels[start] != 0 {
            continue;
        }
        let id = sizes.len();
        sizes.push(0);
        labels[start] = id;
        stack.push(start);
        while let Some(i) = stack.pop() {
            sizes[id] += 1;
            let (c, r) = ((i % width) as isize, (i / width) as isize);
            for &(dc, dr) in offsets {
                let (nc, nr) = (c + dc, r + dr);
                if nc < 0 || nr < 0 || nc >= width as isize || nr >= height as isize {
                    continue;
                }
                let j = nr as usize * width + nc as usize;
                if mask[j] && labels[j] == 0 {
                    labels[j] = id;
                    stack.push(j);
                }
            }
        }
    }
    Labels { width, height, labels, sizes }
}
