use ndarray::{ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use super::{AdapterParams, Backbone, BackboneOutput, Prompt};
use crate::encoder::Embedder;
use crate::error::{Error, Result};
use crate::index::EmbeddingIndex;

/// Embed → retrieve → optionally adapt → predict, for one raw feature row.
pub fn predict_with_pipeline(
    embedder: &dyn Embedder,
    adapter: Option<&AdapterParams>,
    index: &EmbeddingIndex,
    x: ArrayView1<f64>,
    k: Option<usize>,
    backbone: &dyn Backbone,
) -> Result<BackboneOutput> {
    if x.len() != embedder.input_dim() {
        return Err(Error::shape(format!("row has {} features, encoder expects {}", x.len(), embedder.input_dim())));
    }
    let z = embedder.embed_row(x);
    predict_embedded(adapter, index, z.view(), k, backbone)
}

fn predict_embedded(
    adapter: Option<&AdapterParams>,
    index: &EmbeddingIndex,
    z: ArrayView1<f64>,
    k: Option<usize>,
    backbone: &dyn Backbone,
) -> Result<BackboneOutput> {
    let ctx = index.retrieve_context(z, k)?;
    let mut prompt = Prompt::new(ctx.embeddings, ctx.labels, z.to_owned())?;
    prompt.context_row_ids = ctx.row_ids;
    if let Some(a) = adapter {
        prompt = a.apply(&prompt)?;
    }
    backbone.predict(&prompt)
}

/// [`predict_with_pipeline`] over every row of `x`. Rows are embedded in one
/// batch and predicted in parallel; the output order follows `x`.
pub fn predict_batch(
    embedder: &dyn Embedder,
    adapter: Option<&AdapterParams>,
    index: &EmbeddingIndex,
    x: ArrayView2<f64>,
    k: Option<usize>,
    backbone: &dyn Backbone,
) -> Result<Vec<BackboneOutput>> {
    if x.ncols() != embedder.input_dim() {
        return Err(Error::shape(format!("data has {} features, encoder expects {}", x.ncols(), embedder.input_dim())));
    }
    let z = embedder.embed_batch(x);
    (0..z.nrows())
        .into_par_iter()
        .map(|i| predict_embedded(adapter, index, z.index_axis(Axis(0), i), k, backbone))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::KnnVote;
    use crate::dataset::Labels;
    use crate::distance::DistanceKind;
    use crate::encoder::{Arch, Dims, EncoderEnsemble, EncoderParams};
    use crate::index::build_index;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_members_and_identity_adapter_change_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let dims = Dims { d: 4, h: 3, h_e: 5, m: 2 };
        let p = EncoderParams::init(dims, Arch { gated: true, embedding: true }, &mut rng);
        let x = Array2::from_shape_simple_fn((30, 4), || rng.random_range(-1.0..1.0));
        let labels = Labels::Class((0..30).map(|i| i % 2).collect());
        let index =
            build_index(p.embed_batch(x.view()), labels, (0..30).collect(), DistanceKind::SquaredEuclidean).unwrap();
        let ens = EncoderEnsemble { members: vec![p.clone(); 3], folds: vec![], traces: vec![] };
        let vote = KnnVote::new(2);
        let identity = AdapterParams::identity(2);
        for i in 0..5 {
            let row = x.row(i);
            let single = predict_with_pipeline(&p, None, &index, row, Some(7), &vote).unwrap();
            assert_eq!(single, predict_with_pipeline(&ens, None, &index, row, Some(7), &vote).unwrap());
            assert_eq!(single, predict_with_pipeline(&p, Some(&identity), &index, row, Some(7), &vote).unwrap());
        }
        let batch = predict_batch(&p, None, &index, x.view(), Some(7), &vote).unwrap();
        assert_eq!(batch[3], predict_with_pipeline(&p, None, &index, x.row(3), Some(7), &vote).unwrap());
        assert!(predict_with_pipeline(&p, None, &index, x.row(0).slice(ndarray::s![..3]), None, &vote).is_err());
    }
}
