//! Learnable parameters: the six composition tensors with their four
//! entity-indexed matrices each, the output matrix, word embeddings and the
//! category code table. Models persist as versioned JSON with explicit
//! shapes; doubles round-trip bit-exactly through the decimal encoding.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::{Array1, Array2, Array3};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Hyper, NeuralError, CATEGORY_BITS, NUM_GATES};

/// Reserved embedding key for out-of-vocabulary words.
pub const UNKNOWN_WORD: &str = "<unk>";

/// Current model file version; older files are rejected explicitly.
pub const MODEL_VERSION: u32 = 1;

/// Maps category names to 6-bit codes. Code 0 is reserved for unknown and
/// overflow categories, so at most `2^6 - 1` names are kept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryTable {
    names: Vec<String>,
}

impl CategoryTable {
    pub fn new(mut names: Vec<String>) -> Self {
        let capacity = (1 << CATEGORY_BITS) - 1;
        names.truncate(capacity);
        Self { names }
    }

    pub fn from_categories<'a>(cats: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<&str> = cats.into_iter().collect();
        Self::new(set.into_iter().map(String::from).collect())
    }

    pub fn code(&self, category: &str) -> u8 {
        match self.names.iter().position(|n| n == category) {
            Some(i) => (i + 1) as u8,
            None => 0,
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Parameters of one gate: the bilinear tensor (`pair x pair x d`) and the
/// four entity-selected matrices (`d x pair`), indexed `[left][right]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    pub tensor: Array3<f64>,
    pub w: [[Array2<f64>; 2]; 2],
}

impl GateParams {
    pub fn zeros(hyper: &Hyper) -> Self {
        let pair = hyper.pair_dim();
        let zero = || Array2::zeros((hyper.d, pair));
        Self {
            tensor: Array3::zeros((pair, pair, hyper.d)),
            w: [[zero(), zero()], [zero(), zero()]],
        }
    }
}

/// All learnable arrays of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeLstmParams {
    pub hyper: Hyper,
    pub gates: Vec<GateParams>,
    /// Sentiment head, `classes x d`.
    pub w_out: Array2<f64>,
    pub embeddings: BTreeMap<String, Array1<f64>>,
    pub categories: CategoryTable,
}

impl TreeLstmParams {
    /// All-zero parameters over the given vocabulary; the unknown-word vector
    /// is always present.
    pub fn zeros(hyper: Hyper, vocab: &BTreeSet<String>, categories: CategoryTable) -> Self {
        let mut embeddings = BTreeMap::new();
        embeddings.insert(UNKNOWN_WORD.to_string(), Array1::zeros(hyper.d));
        for word in vocab {
            embeddings.insert(word.clone(), Array1::zeros(hyper.d));
        }
        Self {
            hyper,
            gates: (0..NUM_GATES).map(|_| GateParams::zeros(&hyper)).collect(),
            w_out: Array2::zeros((Hyper::CLASSES, hyper.d)),
            embeddings,
            categories,
        }
    }

    /// Uniform(-r, r) initialization with `r = 1/sqrt(pair_dim)`. Words with
    /// pre-trained vectors keep them; everything else is drawn in a fixed
    /// order (gates, output matrix, then sorted vocabulary) so the result is
    /// a pure function of the seed.
    pub fn init(
        hyper: Hyper,
        vocab: &BTreeSet<String>,
        categories: CategoryTable,
        seed: u64,
        pretrained: Option<&BTreeMap<String, Vec<f64>>>,
    ) -> Result<Self, NeuralError> {
        if let Some(pre) = pretrained {
            for (word, vec) in pre {
                if vec.len() != hyper.d {
                    let _ = word;
                    return Err(NeuralError::EmbeddingDimMismatch {
                        expected: hyper.d,
                        found: vec.len(),
                    });
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = 1.0 / (hyper.pair_dim() as f64).sqrt();
        let dist = Uniform::new_inclusive(-r, r);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| dist.sample(&mut rng)).collect() };

        let pair = hyper.pair_dim();
        let mut gates = Vec::with_capacity(NUM_GATES);
        for _ in 0..NUM_GATES {
            let tensor =
                Array3::from_shape_vec((pair, pair, hyper.d), draw(pair * pair * hyper.d))
                    .expect("tensor shape");
            let mut w_mat = || {
                Array2::from_shape_vec((hyper.d, pair), draw(hyper.d * pair)).expect("w shape")
            };
            let w = [[w_mat(), w_mat()], [w_mat(), w_mat()]];
            gates.push(GateParams { tensor, w });
        }
        let w_out = Array2::from_shape_vec(
            (Hyper::CLASSES, hyper.d),
            draw(Hyper::CLASSES * hyper.d),
        )
        .expect("w_out shape");

        let mut embeddings = BTreeMap::new();
        embeddings.insert(UNKNOWN_WORD.to_string(), Array1::from(draw(hyper.d)));
        for word in vocab {
            embeddings.insert(word.clone(), Array1::from(draw(hyper.d)));
        }
        if let Some(pre) = pretrained {
            for (word, vec) in pre {
                if let Some(slot) = embeddings.get_mut(word) {
                    *slot = Array1::from(vec.clone());
                }
            }
        }
        Ok(Self { hyper, gates, w_out, embeddings, categories })
    }

    /// Embedding lookup with fallback to the unknown-word vector.
    pub fn embedding(&self, word: &str) -> &Array1<f64> {
        self.embeddings
            .get(word)
            .unwrap_or_else(|| &self.embeddings[UNKNOWN_WORD])
    }

    pub fn knows_word(&self, word: &str) -> bool {
        word != UNKNOWN_WORD && self.embeddings.contains_key(word)
    }

    /// Structural validation used after deserialization.
    pub fn check(&self) -> Result<(), NeuralError> {
        let pair = self.hyper.pair_dim();
        let d = self.hyper.d;
        if self.gates.len() != NUM_GATES {
            return Err(NeuralError::InvalidModel(format!(
                "expected {NUM_GATES} gates, found {}",
                self.gates.len()
            )));
        }
        for gate in &self.gates {
            if gate.tensor.dim() != (pair, pair, d) {
                return Err(NeuralError::InvalidModel("tensor shape".into()));
            }
            for row in &gate.w {
                for w in row {
                    if w.dim() != (d, pair) {
                        return Err(NeuralError::InvalidModel("gate matrix shape".into()));
                    }
                }
            }
        }
        if self.w_out.dim() != (Hyper::CLASSES, d) {
            return Err(NeuralError::InvalidModel("output matrix shape".into()));
        }
        if !self.embeddings.contains_key(UNKNOWN_WORD) {
            return Err(NeuralError::InvalidModel("missing unknown-word vector".into()));
        }
        for (word, vec) in &self.embeddings {
            if vec.len() != d {
                return Err(NeuralError::InvalidModel(format!(
                    "embedding {word:?} has dimension {}",
                    vec.len()
                )));
            }
        }
        let mut finite = true;
        self.for_each_value(|v| finite &= v.is_finite());
        if !finite {
            return Err(NeuralError::InvalidModel("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn for_each_value(&self, mut f: impl FnMut(f64)) {
        for gate in &self.gates {
            gate.tensor.iter().for_each(|&v| f(v));
            for row in &gate.w {
                for w in row {
                    w.iter().for_each(|&v| f(v));
                }
            }
        }
        self.w_out.iter().for_each(|&v| f(v));
        for vec in self.embeddings.values() {
            vec.iter().for_each(|&v| f(v));
        }
    }

    /// Total number of scalar parameters.
    pub fn coord_count(&self) -> usize {
        let pair = self.hyper.pair_dim();
        let d = self.hyper.d;
        let per_gate = pair * pair * d + 4 * d * pair;
        NUM_GATES * per_gate + Hyper::CLASSES * d + self.embeddings.len() * d
    }

    /// Reads one scalar by flat coordinate. The layout is: per gate the
    /// tensor (row-major) then the four matrices in `[0][0],[0][1],[1][0],
    /// [1][1]` order, then the output matrix, then embeddings in key order.
    pub fn coord_get(&self, idx: usize) -> f64 {
        self.coord_locate(idx, |v| *v)
    }

    pub fn coord_set(&mut self, idx: usize, value: f64) {
        let pair = self.hyper.pair_dim();
        let d = self.hyper.d;
        let tensor_len = pair * pair * d;
        let w_len = d * pair;
        let per_gate = tensor_len + 4 * w_len;
        let gates_len = NUM_GATES * per_gate;
        if idx < gates_len {
            let gate = &mut self.gates[idx / per_gate];
            let off = idx % per_gate;
            if off < tensor_len {
                gate.tensor.as_slice_mut().expect("contiguous")[off] = value;
            } else {
                let off = off - tensor_len;
                let w = &mut gate.w[off / w_len / 2][(off / w_len) % 2];
                w.as_slice_mut().expect("contiguous")[off % w_len] = value;
            }
            return;
        }
        let idx = idx - gates_len;
        let out_len = Hyper::CLASSES * d;
        if idx < out_len {
            self.w_out.as_slice_mut().expect("contiguous")[idx] = value;
            return;
        }
        let idx = idx - out_len;
        let vec = self
            .embeddings
            .values_mut()
            .nth(idx / d)
            .expect("coordinate out of range");
        vec[idx % d] = value;
    }

    fn coord_locate<R>(&self, idx: usize, read: impl Fn(&f64) -> R) -> R {
        let pair = self.hyper.pair_dim();
        let d = self.hyper.d;
        let tensor_len = pair * pair * d;
        let w_len = d * pair;
        let per_gate = tensor_len + 4 * w_len;
        let gates_len = NUM_GATES * per_gate;
        if idx < gates_len {
            let gate = &self.gates[idx / per_gate];
            let off = idx % per_gate;
            if off < tensor_len {
                return read(&gate.tensor.as_slice().expect("contiguous")[off]);
            }
            let off = off - tensor_len;
            let w = &gate.w[off / w_len / 2][(off / w_len) % 2];
            return read(&w.as_slice().expect("contiguous")[off % w_len]);
        }
        let idx = idx - gates_len;
        let out_len = Hyper::CLASSES * d;
        if idx < out_len {
            return read(&self.w_out.as_slice().expect("contiguous")[idx]);
        }
        let idx = idx - out_len;
        let vec = self
            .embeddings
            .values()
            .nth(idx / d)
            .expect("coordinate out of range");
        read(&vec[idx % d])
    }
}

#[derive(Serialize, Deserialize)]
struct ModelEnvelope {
    version: u32,
    #[serde(flatten)]
    params: TreeLstmParams,
}

pub fn save_model(path: &Path, params: &TreeLstmParams) -> Result<(), NeuralError> {
    let envelope = ModelEnvelope { version: MODEL_VERSION, params: params.clone() };
    let json = serde_json::to_string(&envelope)?;
    fs::write(path, json)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<TreeLstmParams, NeuralError> {
    let text = fs::read_to_string(path)?;
    let envelope: ModelEnvelope = serde_json::from_str(&text)?;
    if envelope.version != MODEL_VERSION {
        return Err(NeuralError::ModelVersionMismatch { found: envelope.version });
    }
    envelope.params.check()?;
    Ok(envelope.params)
}

/// Reads a plain-text embedding file: an optional `count dim` header line,
/// then `word v1 .. vd` per line, whitespace separated.
pub fn load_embedding_file(path: &Path, d: usize) -> Result<BTreeMap<String, Vec<f64>>, NeuralError> {
    let file = fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut out = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if i == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
            continue; // header
        }
        let word = fields[0].to_string();
        let values: Result<Vec<f64>, _> = fields[1..].iter().map(|f| f.parse::<f64>()).collect();
        let values = values.map_err(|e| NeuralError::BadEmbeddingFile {
            line: i + 1,
            message: e.to_string(),
        })?;
        if values.len() != d {
            return Err(NeuralError::EmbeddingDimMismatch { expected: d, found: values.len() });
        }
        out.insert(word, values);
    }
    Ok(out)
}
