//! Radiance field: positional-encoding MLP mapping (position, direction)
//! to (color, density), optionally with a blending-weight head.

use crate::autodiff::{kernels, NodeId, ParamStore, Tape, Tensor};
use crate::radiance::encode::{encoded_dim, positional_encode};
use crate::rng::Rng;
use crate::{Error, Result};

/// Architecture description plus the block-name prefix of its parameters.
///
/// The trunk maps encoded positions through `depth` rectifier layers of
/// `hidden` units; density (softplus) and the optional blending weight
/// (sigmoid) branch off the trunk before direction injection, color comes
/// from a small head over trunk features concatenated with the encoded
/// direction.
#[derive(Clone, Debug)]
pub struct RadianceField {
    pub prefix: String,
    pub l_pos: usize,
    pub l_dir: usize,
    pub hidden: usize,
    pub depth: usize,
    pub color_hidden: usize,
    pub blend_head: bool,
}

impl RadianceField {
    /// Desk-scale default: 4 hidden layers x 64 units, L_pos 10, L_dir 4.
    pub fn standard(prefix: &str, blend_head: bool) -> Self {
        RadianceField {
            prefix: prefix.to_string(),
            l_pos: 10,
            l_dir: 4,
            hidden: 64,
            depth: 4,
            color_hidden: 32,
            blend_head,
        }
    }

    pub fn pos_dim(&self) -> usize {
        encoded_dim(3, self.l_pos)
    }

    pub fn dir_dim(&self) -> usize {
        encoded_dim(3, self.l_dir)
    }

    /// Declared input dimensionality (position and direction encodings).
    pub fn input_dim(&self) -> usize {
        self.pos_dim() + self.dir_dim()
    }

    /// Declared output dimensionality: RGB + density, +1 with a blend head.
    pub fn output_dim(&self) -> usize {
        if self.blend_head {
            5
        } else {
            4
        }
    }

    fn block(&self, name: &str) -> String {
        format!("{}.{name}", self.prefix)
    }

    pub fn block_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.depth {
            names.push(self.block(&format!("trunk{i}.w")));
            names.push(self.block(&format!("trunk{i}.b")));
        }
        for head in ["sigma", "color0", "color1"] {
            names.push(self.block(&format!("{head}.w")));
            names.push(self.block(&format!("{head}.b")));
        }
        if self.blend_head {
            names.push(self.block("blend.w"));
            names.push(self.block("blend.b"));
        }
        names
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        let mut add = |name: String, rows: usize, cols: usize, scale: f64, rng: &mut Rng| {
            let w: Vec<f64> = (0..rows * cols).map(|_| rng.normal() * scale).collect();
            store.add_block(&name, vec![rows, cols], w, true)?;
            let bias = name.replace(".w", ".b");
            store.add_block(&bias, vec![rows], vec![0.0; rows], true)
        };
        let mut fan_in = self.pos_dim();
        for i in 0..self.depth {
            let scale = (2.0 / fan_in as f64).sqrt();
            add(self.block(&format!("trunk{i}.w")), self.hidden, fan_in, scale, rng)?;
            fan_in = self.hidden;
        }
        let xavier = |n: usize| (1.0 / n as f64).sqrt();
        add(self.block("sigma.w"), 1, self.hidden, xavier(self.hidden), rng)?;
        if self.blend_head {
            add(self.block("blend.w"), 1, self.hidden, xavier(self.hidden), rng)?;
        }
        let color_in = self.hidden + self.dir_dim();
        add(
            self.block("color0.w"),
            self.color_hidden,
            color_in,
            (2.0 / color_in as f64).sqrt(),
            rng,
        )?;
        add(
            self.block("color1.w"),
            3,
            self.color_hidden,
            xavier(self.color_hidden),
            rng,
        )?;
        Ok(())
    }

    fn affine_tape(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: NodeId,
        name: &str,
    ) -> Result<NodeId> {
        let w = tape.param(store, &self.block(&format!("{name}.w")))?;
        let b = tape.param(store, &self.block(&format!("{name}.b")))?;
        tape.affine(x, w, b)
    }

    /// Forward pass on the tape from already-encoded inputs.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        pos_enc: NodeId,
        dir_enc: NodeId,
    ) -> Result<FieldNodes> {
        self.check_dims(tape.value(pos_enc).cols(), tape.value(dir_enc).cols())?;
        let mut h = pos_enc;
        for i in 0..self.depth {
            h = self.affine_tape(tape, store, h, &format!("trunk{i}"))?;
            h = tape.relu(h);
        }
        let sigma_raw = self.affine_tape(tape, store, h, "sigma")?;
        let sigma = tape.softplus(sigma_raw);
        let eta = if self.blend_head {
            let raw = self.affine_tape(tape, store, h, "blend")?;
            Some(tape.sigmoid(raw))
        } else {
            None
        };
        let hc = tape.concat_cols(h, dir_enc)?;
        let c0 = self.affine_tape(tape, store, hc, "color0")?;
        let c0 = tape.relu(c0);
        let c1 = self.affine_tape(tape, store, c0, "color1")?;
        let color = tape.sigmoid(c1);
        Ok(FieldNodes {
            features: h,
            sigma,
            color,
            eta,
        })
    }

    fn check_dims(&self, pos_cols: usize, dir_cols: usize) -> Result<()> {
        if pos_cols != self.pos_dim() || dir_cols != self.dir_dim() {
            return Err(Error::Shape(format!(
                "field `{}` expects encodings {}+{}, got {}+{}",
                self.prefix,
                self.pos_dim(),
                self.dir_dim(),
                pos_cols,
                dir_cols
            )));
        }
        Ok(())
    }

    fn affine_plain(&self, store: &ParamStore, x: &Tensor, name: &str) -> Result<Tensor> {
        let w = store.block(&self.block(&format!("{name}.w")))?;
        let b = store.block(&self.block(&format!("{name}.b")))?;
        let (o, icols) = w.shape2d();
        if icols != x.cols() {
            return Err(Error::Shape(format!(
                "field `{}` layer {name}: {} inputs vs {} weights",
                self.prefix,
                x.cols(),
                icols
            )));
        }
        let mut y = Tensor::zeros(x.rows(), o);
        kernels::affine_forward(
            x.data(),
            x.rows(),
            icols,
            w.values(),
            o,
            b.values(),
            y.data_mut(),
        );
        Ok(y)
    }

    /// Trunk features without the heads; the stage-3 blend training path
    /// evaluates the frozen trunk once and tapes only the head.
    pub fn trunk_plain(&self, store: &ParamStore, pos_enc: &Tensor) -> Result<Tensor> {
        self.check_dims(pos_enc.cols(), self.dir_dim())?;
        let mut h = pos_enc.clone();
        for i in 0..self.depth {
            h = self.affine_plain(store, &h, &format!("trunk{i}"))?;
            h.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        }
        Ok(h)
    }

    /// Fast inference path; returns density, color, optional blending
    /// weight and the trunk features.
    pub fn forward_plain(
        &self,
        store: &ParamStore,
        pos_enc: &Tensor,
        dir_enc: &Tensor,
    ) -> Result<FieldEval> {
        self.check_dims(pos_enc.cols(), dir_enc.cols())?;
        let h = self.trunk_plain(store, pos_enc)?;
        let n = h.rows();

        let mut sigma = self.affine_plain(store, &h, "sigma")?;
        sigma
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = kernels::softplus(*v));

        let eta = if self.blend_head {
            let mut e = self.affine_plain(store, &h, "blend")?;
            e.data_mut()
                .iter_mut()
                .for_each(|v| *v = kernels::sigmoid(*v));
            Some(e.into_data())
        } else {
            None
        };

        let mut hc_data = Vec::with_capacity(n * (self.hidden + self.dir_dim()));
        for r in 0..n {
            hc_data.extend_from_slice(&h.data()[r * self.hidden..(r + 1) * self.hidden]);
            hc_data.extend_from_slice(&dir_enc.data()[r * self.dir_dim()..(r + 1) * self.dir_dim()]);
        }
        let hc = Tensor::new(n, self.hidden + self.dir_dim(), hc_data)?;
        let mut c0 = self.affine_plain(store, &hc, "color0")?;
        c0.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        let mut color = self.affine_plain(store, &c0, "color1")?;
        color
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = kernels::sigmoid(*v));

        Ok(FieldEval {
            sigma: sigma.into_data(),
            color: color.into_data(),
            eta,
            features: h,
        })
    }

    /// Single-point query: color in [0,1]^3 (sigmoid) and density >= 0
    /// (softplus).
    pub fn query(&self, store: &ParamStore, x: [f64; 3], d: [f64; 3]) -> Result<([f64; 3], f64)> {
        let pos = Tensor::row(positional_encode(&x, self.l_pos))?;
        let dir = Tensor::row(positional_encode(&d, self.l_dir))?;
        let eval = self.forward_plain(store, &pos, &dir)?;
        Ok((
            [eval.color[0], eval.color[1], eval.color[2]],
            eval.sigma[0],
        ))
    }
}

/// Tape nodes produced by a field forward pass.
pub struct FieldNodes {
    pub features: NodeId,
    /// `[n×1]` softplus density.
    pub sigma: NodeId,
    /// `[n×3]` sigmoid color.
    pub color: NodeId,
    /// `[n×1]` sigmoid blending weight when the head is enabled.
    pub eta: Option<NodeId>,
}

/// Plain forward results.
pub struct FieldEval {
    pub sigma: Vec<f64>,
    /// Row-major `n×3`.
    pub color: Vec<f64>,
    pub eta: Option<Vec<f64>>,
    pub features: Tensor,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_grad;

    fn tiny_field(prefix: &str, blend: bool) -> RadianceField {
        RadianceField {
            prefix: prefix.to_string(),
            l_pos: 2,
            l_dir: 1,
            hidden: 8,
            depth: 2,
            color_hidden: 6,
            blend_head: blend,
        }
    }

    #[test]
    fn zero_output_layers_give_gray_and_softplus_zero() {
        let field = tiny_field("f", true);
        let mut store = ParamStore::new();
        let mut rng = Rng::new(3);
        field.init_params(&mut store, &mut rng).unwrap();
        for name in ["f.sigma.w", "f.color1.w", "f.blend.w"] {
            store.values_mut(name).unwrap().iter_mut().for_each(|v| *v = 0.0);
        }
        let (color, sigma) = field.query(&store, [0.3, -0.2, 0.5], [0.0, 0.0, 1.0]).unwrap();
        for c in color {
            assert!((c - 0.5).abs() < 1e-15);
        }
        assert!((sigma - 2f64.ln()).abs() < 1e-12); // softplus(0)
    }

    #[test]
    fn output_ignores_direction_when_dir_weights_are_zero() {
        let field = tiny_field("f", false);
        let mut store = ParamStore::new();
        let mut rng = Rng::new(4);
        field.init_params(&mut store, &mut rng).unwrap();
        // Zero the direction columns of the color head input.
        {
            let w = store.values_mut("f.color0.w").unwrap();
            let cols = field.hidden + field.dir_dim();
            for r in 0..field.color_hidden {
                for c in field.hidden..cols {
                    w[r * cols + c] = 0.0;
                }
            }
        }
        let (c1, s1) = field.query(&store, [0.1, 0.2, 0.3], [0.0, 0.0, 1.0]).unwrap();
        let (c2, s2) = field.query(&store, [0.1, 0.2, 0.3], [0.7071, 0.0, 0.7071]).unwrap();
        assert_eq!(c1, c2);
        assert_eq!(s1, s2);
    }

    #[test]
    fn density_gradient_matches_finite_differences() {
        let field = tiny_field("f", false);
        let mut store = ParamStore::new();
        let mut rng = Rng::new(5);
        field.init_params(&mut store, &mut rng).unwrap();

        let pos = Tensor::row(positional_encode(&[0.2, -0.4, 0.6], field.l_pos)).unwrap();
        let dir = Tensor::row(positional_encode(&[0.0, 0.0, 1.0], field.l_dir)).unwrap();

        let loss = |store: &ParamStore| -> Result<f64> {
            let mut tape = Tape::new();
            let p = tape.constant(pos.clone());
            let d = tape.constant(dir.clone());
            let out = field.forward_tape(&mut tape, store, p, d)?;
            let l = tape.sum_all(out.sigma);
            tape.value(l).item()
        };

        let mut tape = Tape::new();
        let p = tape.constant(pos.clone());
        let d = tape.constant(dir.clone());
        let out = field.forward_tape(&mut tape, &store, p, d).unwrap();
        let l = tape.sum_all(out.sigma);
        tape.backward(l, &mut store).unwrap();

        let fd = finite_diff_grad(loss, &store, 1e-5).unwrap();
        for (name, fd_grad) in &fd {
            let got = store.grad(name).unwrap();
            for (a, b) in got.iter().zip(fd_grad) {
                let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-2);
                assert!(rel < 1e-4, "block {name}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn tape_and_plain_paths_agree() {
        let field = tiny_field("f", true);
        let mut store = ParamStore::new();
        let mut rng = Rng::new(6);
        field.init_params(&mut store, &mut rng).unwrap();

        let points: Vec<[f64; 3]> = (0..5)
            .map(|i| {
                let x = i as f64 * 0.13 - 0.3;
                [x, x * 0.5, 1.0 - x]
            })
            .collect();
        let dirs: Vec<[f64; 3]> = (0..5).map(|_| [0.0, 0.0, 1.0]).collect();
        let pos = crate::radiance::encode::encode_batch(&points, field.l_pos);
        let dir = crate::radiance::encode::encode_batch(&dirs, field.l_dir);

        let plain = field.forward_plain(&store, &pos, &dir).unwrap();
        let mut tape = Tape::new();
        let p = tape.constant(pos);
        let d = tape.constant(dir);
        let nodes = field.forward_tape(&mut tape, &store, p, d).unwrap();
        assert_eq!(tape.value(nodes.sigma).data(), plain.sigma.as_slice());
        assert_eq!(tape.value(nodes.color).data(), plain.color.as_slice());
        assert_eq!(
            tape.value(nodes.eta.unwrap()).data(),
            plain.eta.unwrap().as_slice()
        );
    }
}
