use std::fs;
use std::path::Path;

use ndarray::Array2;
use sha2::{Digest, Sha256};

use super::features::Cards;
use super::params::{SeqDims, ITEM_CATS, USER_CATS};
use super::SeqModel;
use crate::binfmt::{Reader, Writer};
use crate::dataset::{DatasetBundle, ItemId, ItemVocab};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"JRSEQLM\0";
const VERSION: u32 = 1;

fn vocab_hash(items: &[ItemId]) -> [u8; 32] {
    let mut h = Sha256::new();
    for i in items {
        h.update(i.0.to_le_bytes());
    }
    h.finalize().into()
}

/// Header (magic, version, scalar width, dims, table heights, vocabulary
/// and its SHA-256), then every parameter tensor as `rows cols values..`.
pub fn write_seq_model<T: Scalar>(path: impl AsRef<Path>, model: &SeqModel<T>) -> Result<()> {
    let path = path.as_ref();
    let mut w = Writer::new(MAGIC, VERSION);
    w.u8(T::WIDTH_TAG);
    let d = model.dims;
    for v in [d.emb, d.input, d.hidden, d.vocab] {
        w.u32(v as u32);
    }
    let c = &model.cards;
    for &v in c.user.iter().chain(&c.item).chain([&c.user_tokens, &c.item_tokens]) {
        w.u32(v as u32);
    }
    let items = model.vocab.items();
    w.u32(items.len() as u32);
    w.bytes(&vocab_hash(items));
    for i in items {
        w.u64(i.0);
    }
    w.u32(model.params.len() as u32);
    for a in &model.params.t {
        w.u32(a.nrows() as u32);
        w.u32(a.ncols() as u32);
        for &v in a {
            match T::WIDTH_TAG {
                4 => w.f32(v.as_f64() as f32),
                _ => w.f64(v.as_f64()),
            }
        }
    }
    fs::write(path, w.buf).map_err(|e| Error::io(path, e))
}

/// Restores a model written by [`write_seq_model`]; features are resolved
/// against `bundle`. Values are converted when the scalar width differs.
pub fn read_seq_model<T: Scalar>(path: impl AsRef<Path>, bundle: &DatasetBundle) -> Result<SeqModel<T>> {
    let path = path.as_ref();
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (mut r, version) = Reader::open(&data, MAGIC, "sequence model")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported sequence model version {version}")));
    }
    let width = r.u8()?;
    if width != 4 && width != 8 {
        return Err(Error::Checkpoint(format!("bad scalar width {width}")));
    }
    let mut next = || r.u32().map(|v| v as usize);
    let dims = SeqDims { emb: next()?, input: next()?, hidden: next()?, vocab: next()? };
    let mut cards = Cards { user: [0; USER_CATS], item: [0; ITEM_CATS], user_tokens: 0, item_tokens: 0 };
    for v in cards.user.iter_mut().chain(cards.item.iter_mut()) {
        *v = next()?;
    }
    cards.user_tokens = next()?;
    cards.item_tokens = next()?;
    let (e, f, h, v) = (dims.emb as u128, dims.input as u128, dims.hidden as u128, dims.vocab as u128);
    let tables: u128 = cards.user.iter().chain(&cards.item).chain([&cards.user_tokens, &cards.item_tokens]).map(|&n| n as u128).sum();
    let n_params = (tables + v) * e + (18 * e + 2) * f + (f + h + 1) * 4 * h + (h + 1) * v;
    if n_params * width as u128 > r.remaining() as u128 {
        return Err(Error::Checkpoint("header sizes exceed the file".into()));
    }
    let n_items = r.u32()? as usize;
    let hash = r.bytes(32)?;
    let items = (0..n_items).map(|_| r.u64().map(ItemId)).collect::<Result<Vec<_>>>()?;
    if hash != vocab_hash(&items) {
        return Err(Error::Checkpoint("vocabulary hash mismatch".into()));
    }
    let vocab = ItemVocab::from_items(items);
    if vocab.len() != dims.vocab {
        return Err(Error::Checkpoint("vocabulary size disagrees with dims".into()));
    }
    let mut model = SeqModel::<T>::assemble(bundle, dims, vocab, cards);
    let slots = r.u32()? as usize;
    if slots != model.params.len() {
        return Err(Error::Checkpoint(format!("expected {} tensors, found {slots}", model.params.len())));
    }
    for a in &mut model.params.t {
        let shape = (r.u32()? as usize, r.u32()? as usize);
        if shape != a.dim() {
            return Err(Error::Checkpoint(format!("tensor shape {shape:?}, expected {:?}", a.dim())));
        }
        let vals = (0..shape.0 * shape.1)
            .map(|_| if width == 4 { r.f32().map(|v| T::of(v as f64)) } else { r.f64().map(T::of) })
            .collect::<Result<Vec<T>>>()?;
        *a = Array2::from_shape_vec(shape, vals).expect("shape checked");
    }
    r.finish()?;
    Ok(model)
}
