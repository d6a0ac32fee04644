//! InceptionV3 convolutional base (Keras layout, no top).

use candle_core::Tensor;

use super::FeatureExtractor;
use crate::error::Result;
use crate::model::layers::{avg_pool_3x3_same, max_pool, Activation, ConvBn, Padding};
use crate::model::params::ParamBuilder;

struct Builder<'a> {
    b: &'a mut ParamBuilder,
    prefix: String,
}

impl Builder<'_> {
    fn conv(&mut self, name: &str, in_c: usize, out_c: usize, k: (usize, usize), stride: usize, padding: Padding) -> Result<ConvBn> {
        ConvBn::new(
            self.b,
            &format!("{}.{name}", self.prefix),
            in_c,
            out_c,
            k,
            stride,
            padding,
            Activation::Relu,
        )
    }

    fn same(&mut self, name: &str, in_c: usize, out_c: usize, k: (usize, usize)) -> Result<ConvBn> {
        self.conv(name, in_c, out_c, k, 1, Padding::Same)
    }
}

fn chain(x: &Tensor, layers: &[ConvBn]) -> Result<Tensor> {
    let mut x = x.clone();
    for l in layers {
        x = l.forward(&x)?;
    }
    Ok(x)
}

struct InceptionA {
    b1: ConvBn,
    b5: [ConvBn; 2],
    b3: [ConvBn; 3],
    pool: ConvBn,
}

impl InceptionA {
    fn new(b: &mut ParamBuilder, name: &str, in_c: usize, pool_features: usize) -> Result<Self> {
        let mut p = Builder { b, prefix: name.to_string() };
        Ok(Self {
            b1: p.same("branch1x1", in_c, 64, (1, 1))?,
            b5: [p.same("branch5x5_1", in_c, 48, (1, 1))?, p.same("branch5x5_2", 48, 64, (5, 5))?],
            b3: [
                p.same("branch3x3dbl_1", in_c, 64, (1, 1))?,
                p.same("branch3x3dbl_2", 64, 96, (3, 3))?,
                p.same("branch3x3dbl_3", 96, 96, (3, 3))?,
            ],
            pool: p.same("branch_pool", in_c, pool_features, (1, 1))?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let pooled = self.pool.forward(&avg_pool_3x3_same(x)?)?;
        Ok(Tensor::cat(&[self.b1.forward(x)?, chain(x, &self.b5)?, chain(x, &self.b3)?, pooled], 1)?)
    }
}

struct ReductionA {
    b3: ConvBn,
    dbl: [ConvBn; 3],
}

impl ReductionA {
    fn new(b: &mut ParamBuilder, name: &str, in_c: usize) -> Result<Self> {
        let mut p = Builder { b, prefix: name.to_string() };
        Ok(Self {
            b3: p.conv("branch3x3", in_c, 384, (3, 3), 2, Padding::Valid)?,
            dbl: [
                p.same("branch3x3dbl_1", in_c, 64, (1, 1))?,
                p.same("branch3x3dbl_2", 64, 96, (3, 3))?,
                p.conv("branch3x3dbl_3", 96, 96, (3, 3), 2, Padding::Valid)?,
            ],
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(Tensor::cat(&[self.b3.forward(x)?, chain(x, &self.dbl)?, max_pool(x, 3, 2)?], 1)?)
    }
}

struct InceptionC {
    b1: ConvBn,
    b7: [ConvBn; 3],
    dbl: [ConvBn; 5],
    pool: ConvBn,
}

impl InceptionC {
    fn new(b: &mut ParamBuilder, name: &str, in_c: usize, c7: usize) -> Result<Self> {
        let mut p = Builder { b, prefix: name.to_string() };
        Ok(Self {
            b1: p.same("branch1x1", in_c, 192, (1, 1))?,
            b7: [
                p.same("branch7x7_1", in_c, c7, (1, 1))?,
                p.same("branch7x7_2", c7, c7, (1, 7))?,
                p.same("branch7x7_3", c7, 192, (7, 1))?,
            ],
            dbl: [
                p.same("branch7x7dbl_1", in_c, c7, (1, 1))?,
                p.same("branch7x7dbl_2", c7, c7, (7, 1))?,
                p.same("branch7x7dbl_3", c7, c7, (1, 7))?,
                p.same("branch7x7dbl_4", c7, c7, (7, 1))?,
                p.same("branch7x7dbl_5", c7, 192, (1, 7))?,
            ],
            pool: p.same("branch_pool", in_c, 192, (1, 1))?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let pooled = self.pool.forward(&avg_pool_3x3_same(x)?)?;
        Ok(Tensor::cat(&[self.b1.forward(x)?, chain(x, &self.b7)?, chain(x, &self.dbl)?, pooled], 1)?)
    }
}

struct ReductionB {
    b3: [ConvBn; 2],
    b7: [ConvBn; 4],
}

impl ReductionB {
    fn new(b: &mut ParamBuilder, name: &str, in_c: usize) -> Result<Self> {
        let mut p = Builder { b, prefix: name.to_string() };
        Ok(Self {
            b3: [
                p.same("branch3x3_1", in_c, 192, (1, 1))?,
                p.conv("branch3x3_2", 192, 320, (3, 3), 2, Padding::Valid)?,
            ],
            b7: [
                p.same("branch7x7x3_1", in_c, 192, (1, 1))?,
                p.same("branch7x7x3_2", 192, 192, (1, 7))?,
                p.same("branch7x7x3_3", 192, 192, (7, 1))?,
                p.conv("branch7x7x3_4", 192, 192, (3, 3), 2, Padding::Valid)?,
            ],
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(Tensor::cat(&[chain(x, &self.b3)?, chain(x, &self.b7)?, max_pool(x, 3, 2)?], 1)?)
    }
}

struct InceptionE {
    b1: ConvBn,
    b3_1: ConvBn,
    b3_2a: ConvBn,
    b3_2b: ConvBn,
    dbl_1: ConvBn,
    dbl_2: ConvBn,
    dbl_3a: ConvBn,
    dbl_3b: ConvBn,
    pool: ConvBn,
}

impl InceptionE {
    fn new(b: &mut ParamBuilder, name: &str, in_c: usize) -> Result<Self> {
        let mut p = Builder { b, prefix: name.to_string() };
        Ok(Self {
            b1: p.same("branch1x1", in_c, 320, (1, 1))?,
            b3_1: p.same("branch3x3_1", in_c, 384, (1, 1))?,
            b3_2a: p.same("branch3x3_2a", 384, 384, (1, 3))?,
            b3_2b: p.same("branch3x3_2b", 384, 384, (3, 1))?,
            dbl_1: p.same("branch3x3dbl_1", in_c, 448, (1, 1))?,
            dbl_2: p.same("branch3x3dbl_2", 448, 384, (3, 3))?,
            dbl_3a: p.same("branch3x3dbl_3a", 384, 384, (1, 3))?,
            dbl_3b: p.same("branch3x3dbl_3b", 384, 384, (3, 1))?,
            pool: p.same("branch_pool", in_c, 192, (1, 1))?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let b3 = self.b3_1.forward(x)?;
        let b3 = Tensor::cat(&[self.b3_2a.forward(&b3)?, self.b3_2b.forward(&b3)?], 1)?;
        let dbl = self.dbl_2.forward(&self.dbl_1.forward(x)?)?;
        let dbl = Tensor::cat(&[self.dbl_3a.forward(&dbl)?, self.dbl_3b.forward(&dbl)?], 1)?;
        let pooled = self.pool.forward(&avg_pool_3x3_same(x)?)?;
        Ok(Tensor::cat(&[self.b1.forward(x)?, b3, dbl, pooled], 1)?)
    }
}

pub struct InceptionV3 {
    stem: Vec<ConvBn>,
    mixed_a: Vec<InceptionA>,
    reduction_a: ReductionA,
    mixed_c: Vec<InceptionC>,
    reduction_b: ReductionB,
    mixed_e: Vec<InceptionE>,
}

impl InceptionV3 {
    pub fn new(b: &mut ParamBuilder) -> Result<Self> {
        let mut p = Builder { b, prefix: "stem".into() };
        let stem = vec![
            p.conv("conv1", 3, 32, (3, 3), 2, Padding::Valid)?,
            p.conv("conv2", 32, 32, (3, 3), 1, Padding::Valid)?,
            p.same("conv3", 32, 64, (3, 3))?,
            p.conv("conv4", 64, 80, (1, 1), 1, Padding::Valid)?,
            p.conv("conv5", 80, 192, (3, 3), 1, Padding::Valid)?,
        ];
        let mixed_a = vec![
            InceptionA::new(b, "mixed0", 192, 32)?,
            InceptionA::new(b, "mixed1", 256, 64)?,
            InceptionA::new(b, "mixed2", 288, 64)?,
        ];
        let reduction_a = ReductionA::new(b, "mixed3", 288)?;
        let mixed_c = [128, 160, 160, 192]
            .iter()
            .enumerate()
            .map(|(i, &c7)| InceptionC::new(b, &format!("mixed{}", i + 4), 768, c7))
            .collect::<Result<Vec<_>>>()?;
        let reduction_b = ReductionB::new(b, "mixed8", 768)?;
        let mixed_e = vec![InceptionE::new(b, "mixed9", 1280)?, InceptionE::new(b, "mixed10", 2048)?];
        Ok(Self { stem, mixed_a, reduction_a, mixed_c, reduction_b, mixed_e })
    }
}

impl FeatureExtractor for InceptionV3 {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut x = chain(x, &self.stem[..3])?;
        x = max_pool(&x, 3, 2)?;
        x = chain(&x, &self.stem[3..])?;
        x = max_pool(&x, 3, 2)?;
        for m in &self.mixed_a {
            x = m.forward(&x)?;
        }
        x = self.reduction_a.forward(&x)?;
        for m in &self.mixed_c {
            x = m.forward(&x)?;
        }
        x = self.reduction_b.forward(&x)?;
        for m in &self.mixed_e {
            x = m.forward(&x)?;
        }
        Ok(x)
    }
}
