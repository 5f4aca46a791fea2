//! Layer descriptions shared by model construction and FLOP accounting.

/// `floor((n + 2p - k) / s) + 1`, or `None` when the kernel does not fit.
pub fn conv_out_len(n: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = n + 2 * padding;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Convolution window along (height, width). 1-D convolutions run with a unit
/// width window over a trailing axis of length one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
}

impl ConvGeom {
    pub fn square(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kh: kernel,
            kw: kernel,
            sh: stride,
            sw: stride,
            ph: padding,
            pw: padding,
        }
    }

    pub fn along_time(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kh: kernel,
            kw: 1,
            sh: stride,
            sw: 1,
            ph: padding,
            pw: 0,
        }
    }

    pub fn out_dims(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        Some((
            conv_out_len(h, self.kh, self.sh, self.ph)?,
            conv_out_len(w, self.kw, self.sw, self.pw)?,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv2d,
    Conv1d,
    BatchNorm2d,
    BatchNorm1d,
    Relu,
    Softmax,
    Gap,
    Linear,
}

/// One layer as `(in, out, kernel, stride, padding)`; unused fields are zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl LayerSpec {
    const fn new(kind: LayerKind, i: usize, o: usize, k: usize, s: usize, p: usize) -> Self {
        Self {
            kind,
            in_channels: i,
            out_channels: o,
            kernel: k,
            stride: s,
            padding: p,
        }
    }

    pub const fn conv2d(i: usize, o: usize, k: usize, s: usize, p: usize) -> Self {
        Self::new(LayerKind::Conv2d, i, o, k, s, p)
    }

    pub const fn conv1d(i: usize, o: usize, k: usize, s: usize, p: usize) -> Self {
        Self::new(LayerKind::Conv1d, i, o, k, s, p)
    }

    pub const fn bn2d(c: usize) -> Self {
        Self::new(LayerKind::BatchNorm2d, c, c, 0, 0, 0)
    }

    pub const fn bn1d(c: usize) -> Self {
        Self::new(LayerKind::BatchNorm1d, c, c, 0, 0, 0)
    }

    pub const fn relu() -> Self {
        Self::new(LayerKind::Relu, 0, 0, 0, 0, 0)
    }

    pub const fn softmax() -> Self {
        Self::new(LayerKind::Softmax, 0, 0, 0, 0, 0)
    }

    pub const fn gap() -> Self {
        Self::new(LayerKind::Gap, 0, 0, 0, 0, 0)
    }

    pub const fn linear(i: usize, o: usize) -> Self {
        Self::new(LayerKind::Linear, i, o, 0, 0, 0)
    }

    pub fn geom(&self) -> ConvGeom {
        match self.kind {
            LayerKind::Conv1d => ConvGeom::along_time(self.kernel, self.stride, self.padding),
            _ => ConvGeom::square(self.kernel, self.stride, self.padding),
        }
    }
}
