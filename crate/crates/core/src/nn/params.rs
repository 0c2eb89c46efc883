use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{NnError, Real};

/// The freezable unit of the network. Every parameter tensor belongs to
/// exactly one group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupName {
    PhoneEmbedding,
    ToneStressEmbedding,
    LanguageEmbedding,
    EmotionEmbedding,
    SpeakerEmbedding,
    Encoder,
    DurationModel,
    Decoder,
    Postnet,
}

impl GroupName {
    pub const ALL: [GroupName; 9] = [
        GroupName::PhoneEmbedding,
        GroupName::ToneStressEmbedding,
        GroupName::LanguageEmbedding,
        GroupName::EmotionEmbedding,
        GroupName::SpeakerEmbedding,
        GroupName::Encoder,
        GroupName::DurationModel,
        GroupName::Decoder,
        GroupName::Postnet,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GroupName::PhoneEmbedding => "phone_embedding",
            GroupName::ToneStressEmbedding => "tone_stress_embedding",
            GroupName::LanguageEmbedding => "language_embedding",
            GroupName::EmotionEmbedding => "emotion_embedding",
            GroupName::SpeakerEmbedding => "speaker_embedding",
            GroupName::Encoder => "encoder",
            GroupName::DurationModel => "duration_model",
            GroupName::Decoder => "decoder",
            GroupName::Postnet => "postnet",
        }
    }
}

impl fmt::Display for GroupName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GroupName {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        GroupName::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| NnError::UnknownGroup(s.to_string()))
    }
}

/// Groups excluded from optimizer updates.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeSet(BTreeSet<GroupName>);

impl FreezeSet {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn all() -> Self {
        GroupName::ALL.into_iter().collect()
    }

    /// Parses group names, rejecting anything that is not a declared group.
    pub fn parse<S: AsRef<str>>(names: &[S]) -> Result<Self, NnError> {
        names.iter().map(|n| n.as_ref().trim().parse()).collect()
    }

    pub fn contains(&self, g: GroupName) -> bool {
        self.0.contains(&g)
    }

    pub fn iter(&self) -> impl Iterator<Item = GroupName> + '_ {
        self.0.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_subset(&self, other: &FreezeSet) -> bool {
        self.0.is_subset(&other.0)
    }
}

impl FromIterator<GroupName> for FreezeSet {
    fn from_iter<I: IntoIterator<Item = GroupName>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<F> {
    pub name: String,
    pub group: GroupName,
    pub value: Array2<F>,
}

/// Named parameter tensors, each tagged with its group. All tensors are 2-D;
/// biases are `1 x n`.
///
/// `generation` increments on every mutable access so stale forward caches
/// can be detected.
#[derive(Debug, Clone)]
pub struct ParamStore<F> {
    params: Vec<Param<F>>,
    index: HashMap<String, usize>,
    generation: u64,
}

impl<F> Default for ParamStore<F> {
    fn default() -> Self {
        Self { params: Vec::new(), index: HashMap::new(), generation: 0 }
    }
}

impl<F: PartialEq> PartialEq for ParamStore<F> {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params
    }
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: GroupName, value: Array2<F>) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter name {name}");
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        self.params.push(Param { name, group, value });
        self.generation += 1;
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn param(&self, id: ParamId) -> &Param<F> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Array2<F> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<F> {
        self.generation += 1;
        &mut self.params[id.0].value
    }

    /// Replaces a tensor, allowing its shape to change.
    pub fn replace(&mut self, id: ParamId, value: Array2<F>) {
        self.generation += 1;
        self.params[id.0].value = value;
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<F>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn groups(&self) -> BTreeSet<GroupName> {
        self.params.iter().map(|p| p.group).collect()
    }

    pub fn group_members(&self) -> BTreeMap<GroupName, Vec<ParamId>> {
        let mut out: BTreeMap<GroupName, Vec<ParamId>> = BTreeMap::new();
        for (id, p) in self.iter() {
            out.entry(p.group).or_default().push(id);
        }
        out
    }

    /// Checks that the listed groups cover every tensor and that each of them
    /// owns at least one tensor. Disjointness holds by construction.
    pub fn check_partition(&self, expected: &[GroupName]) -> Result<(), NnError> {
        let expected: BTreeSet<_> = expected.iter().copied().collect();
        let present = self.groups();
        if let Some(g) = present.difference(&expected).next() {
            return Err(NnError::Partition(format!("tensor group {g} is not declared")));
        }
        if let Some(g) = expected.difference(&present).next() {
            return Err(NnError::Partition(format!("group {g} owns no tensors")));
        }
        Ok(())
    }

    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    group: p.group,
                    value: p.value.mapv(|v| G::of(v.as_f64())),
                })
                .collect(),
            index: self.index.clone(),
            generation: 0,
        }
    }

    pub fn zeros_like(&self) -> Vec<Array2<F>> {
        self.params.iter().map(|p| Array2::zeros(p.value.raw_dim())).collect()
    }
}

/// Per-tensor gradients aligned with a [`ParamStore`]; `None` means the
/// tensor did not take part in the computation.
#[derive(Debug, Clone)]
pub struct Grads<F> {
    pub tensors: Vec<Option<Array2<F>>>,
}

impl<F: Real> Grads<F> {
    pub fn empty(n: usize) -> Self {
        Self { tensors: vec![None; n] }
    }

    pub fn get(&self, id: ParamId) -> Option<&Array2<F>> {
        self.tensors.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Array2<F>) {
        match &mut self.tensors[id.0] {
            Some(acc) => *acc += g,
            slot @ None => *slot = Some(g.clone()),
        }
    }

    pub fn accumulate_owned(&mut self, id: ParamId, g: Array2<F>) {
        match &mut self.tensors[id.0] {
            Some(acc) => *acc += &g,
            slot @ None => *slot = Some(g),
        }
    }

    /// Adds `a · b` without materializing the product.
    pub fn accumulate_product(&mut self, id: ParamId, a: ArrayView2<'_, F>, b: ArrayView2<'_, F>) {
        match &mut self.tensors[id.0] {
            Some(acc) => general_mat_mul(F::one(), &a, &b, F::one(), acc),
            slot @ None => *slot = Some(a.dot(&b)),
        }
    }

    pub fn add_assign(&mut self, other: &Grads<F>) {
        for (i, g) in other.tensors.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, s: F) {
        for g in self.tensors.iter_mut().flatten() {
            g.mapv_inplace(|v| v * s);
        }
    }

    pub fn is_all_zero(&self) -> bool {
        self.tensors.iter().flatten().all(|g| g.iter().all(|v| *v == F::zero()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_names_parse_and_print() {
        for g in GroupName::ALL {
            assert_eq!(g.as_str().parse::<GroupName>().unwrap(), g);
        }
        assert!(matches!("decoderz".parse::<GroupName>(), Err(NnError::UnknownGroup(_))));
    }

    #[test]
    fn freeze_set_parse_rejects_unknown() {
        let f = FreezeSet::parse(&["encoder", "phone_embedding"]).unwrap();
        assert!(f.contains(GroupName::Encoder));
        assert_eq!(f.len(), 2);
        assert!(FreezeSet::parse(&["encoder", "vocoder"]).is_err());
    }

    #[test]
    fn partition_check() {
        let mut s = ParamStore::<f64>::new();
        s.add("a", GroupName::Encoder, Array2::zeros((1, 1)));
        s.add("b", GroupName::Decoder, Array2::zeros((1, 1)));
        assert!(s.check_partition(&[GroupName::Encoder, GroupName::Decoder]).is_ok());
        assert!(s.check_partition(&[GroupName::Encoder]).is_err());
        assert!(s
            .check_partition(&[GroupName::Encoder, GroupName::Decoder, GroupName::Postnet])
            .is_err());
    }

    #[test]
    fn generation_tracks_mutation() {
        let mut s = ParamStore::<f32>::new();
        let id = s.add("a", GroupName::Encoder, Array2::zeros((1, 2)));
        let g = s.generation();
        let _ = s.value(id);
        assert_eq!(s.generation(), g);
        s.value_mut(id)[[0, 0]] = 1.0;
        assert!(s.generation() > g);
    }
}
