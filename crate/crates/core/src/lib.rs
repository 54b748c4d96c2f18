pub mod error;
pub mod fcp;
pub mod linalg;
pub mod loss;
pub mod metrics;
pub mod prior;
pub mod rir;
pub mod sampler;
pub mod stft;
pub mod subband;
pub mod synth;
pub mod wav;
pub mod waveform;
pub mod wpe;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/stft.md")]
    mod stft {}
    #[doc = include_str!("../../../book/src/subband.md")]
    mod subband {}
    #[doc = include_str!("../../../book/src/rir-model.md")]
    mod rir_model {}
    #[doc = include_str!("../../../book/src/fcp.md")]
    mod fcp {}
    #[doc = include_str!("../../../book/src/wpe.md")]
    mod wpe {}
    #[doc = include_str!("../../../book/src/priors.md")]
    mod priors {}
    #[doc = include_str!("../../../book/src/sampler.md")]
    mod sampler {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
