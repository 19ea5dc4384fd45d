use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, TensorId};

use super::layers::{elementwise_macs, Act, ConvBnAct, MacItem, MacKind};
use super::params::ParamStore;
use super::{ModelConfig, Session};

/// Atrous Spatial Pyramid Pooling: a 1x1 branch, three 3x3 atrous branches
/// at increasing rates, and a global-pool branch broadcast back to the
/// grid, concatenated and projected to `aspp_channels`.
pub(super) struct Aspp {
    branch1: ConvBnAct,
    atrous: [ConvBnAct; 3],
    pool_conv: ConvBnAct,
    project: ConvBnAct,
    out_channels: usize,
}

impl Aspp {
    pub fn new(config: &ModelConfig, in_channels: usize) -> Aspp {
        let out = config.scaled_head(config.aspp_channels);
        let (r1, r2, r3) = config.aspp_rates;
        let branch1 = ConvBnAct::new("aspp.branch1", in_channels, out, 1, 1, 1, 1, Act::Relu);
        let atrous = [
            ConvBnAct::new("aspp.atrous1", in_channels, out, 3, 1, r1, 1, Act::Relu),
            ConvBnAct::new("aspp.atrous2", in_channels, out, 3, 1, r2, 1, Act::Relu),
            ConvBnAct::new("aspp.atrous3", in_channels, out, 3, 1, r3, 1, Act::Relu),
        ];
        let pool_conv = ConvBnAct::new("aspp.pool", in_channels, out, 1, 1, 1, 1, Act::Relu);
        let project = ConvBnAct::new("aspp.project", out * 5, out, 1, 1, 1, 1, Act::Relu);
        Aspp {
            branch1,
            atrous,
            pool_conv,
            project,
            out_channels: out,
        }
    }

    pub fn init<S: Scalar>(&self, store: &mut ParamStore<S>, rng: &mut ChaCha12Rng) -> Result<()> {
        self.branch1.init(store, rng)?;
        for b in &self.atrous {
            b.init(store, rng)?;
        }
        self.pool_conv.init(store, rng)?;
        self.project.init(store, rng)
    }

    pub fn forward<S: Scalar>(
        &self,
        sess: &mut Session<'_, '_, S>,
        f: TensorId,
    ) -> Result<TensorId> {
        let (_, _, h, w) = sess.graph.nchw(f)?;
        if h == 0 || w == 0 {
            return Err(Error::Shape("aspp: empty spatial extent".into()));
        }
        let b1 = self.branch1.forward(sess, f)?;
        let a1 = self.atrous[0].forward(sess, f)?;
        let a2 = self.atrous[1].forward(sess, f)?;
        let a3 = self.atrous[2].forward(sess, f)?;
        let pooled = sess.graph.global_avg_pool(f)?;
        let pooled = self.pool_conv.forward(sess, pooled)?;
        let pooled = sess.graph.upsample_bilinear(pooled, h, w)?;
        let stacked = sess.graph.concat_channels(&[b1, a1, a2, a3, pooled])?;
        self.project.forward(sess, stacked)
    }

    pub fn macs(&self, h: usize, w: usize, items: &mut Vec<MacItem>) -> Result<()> {
        let (sub, _, _) = self.branch1.macs(h, w)?;
        items.extend(sub);
        for b in &self.atrous {
            let (sub, _, _) = b.macs(h, w)?;
            items.extend(sub);
        }
        items.push(MacItem {
            name: "aspp.global_pool".into(),
            kind: MacKind::Pool,
            macs: self.branch1.conv.cin as u64,
        });
        let (sub, _, _) = self.pool_conv.macs(1, 1)?;
        items.extend(sub);
        items.push(elementwise_macs(
            "aspp.pool.upsample",
            self.out_channels * h * w,
        ));
        let (sub, _, _) = self.project.macs(h, w)?;
        items.extend(sub);
        Ok(())
    }
}
