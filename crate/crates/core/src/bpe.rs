//! Byte-pair encoding with a vocabulary shared by every task.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::preprocess::{LinearSeq, SeqKind};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const SPECIAL_TOKENS: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];
/// One reserved token per task, in task order.
pub const TAG_TOKENS: [&str; 3] = ["<to_mt>", "<to_syn>", "<to_amr>"];
/// Number of ids before the first learned token.
pub const RESERVED: usize = SPECIAL_TOKENS.len() + TAG_TOKENS.len();

/// Tag string of a reserved tag id.
pub fn tag_token(id: u32) -> Option<&'static str> {
    (id as usize).checked_sub(SPECIAL_TOKENS.len()).and_then(|i| TAG_TOKENS.get(i).copied())
}

/// Reserved id of a tag string.
pub fn tag_id(tag: &str) -> Option<u32> {
    TAG_TOKENS.iter().position(|t| *t == tag).map(|i| (SPECIAL_TOKENS.len() + i) as u32)
}

/// Continuation marker in the text form of a segmentation.
pub const CONTINUATION: &str = "@@";
const END_OF_WORD: &str = "</w>";

pub const DEFAULT_NUM_MERGES: usize = 500;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BpeError {
    #[error("no tokens to learn from")]
    EmptyCorpus,
    #[error("merge file line {line}: {message}")]
    BadMergeFile { line: usize, message: String },
    #[error("vocabulary file line {line}: {message}")]
    BadVocabFile { line: usize, message: String },
}

/// One BPE symbol; `word_end` marks the final piece of a word.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Subword {
    pub text: String,
    pub word_end: bool,
}

impl Subword {
    pub fn new(text: impl Into<String>, word_end: bool) -> Self {
        Subword { text: text.into(), word_end }
    }

    /// `lo@@` for a continued piece, `w` for a final one.
    pub fn to_text(&self) -> String {
        if self.word_end {
            self.text.clone()
        } else {
            format!("{}{CONTINUATION}", self.text)
        }
    }

    pub fn from_text(s: &str) -> Self {
        match s.strip_suffix(CONTINUATION) {
            Some(t) if !t.is_empty() => Subword::new(t, false),
            _ => Subword::new(s, true),
        }
    }

    fn merge_form(&self) -> String {
        if self.word_end {
            format!("{}{END_OF_WORD}", self.text)
        } else {
            self.text.clone()
        }
    }

    fn from_merge_form(s: &str) -> Self {
        match s.strip_suffix(END_OF_WORD) {
            Some(t) if !t.is_empty() => Subword::new(t, true),
            _ => Subword::new(s, false),
        }
    }
}

/// Structural tokens that are never split.
pub fn is_protected(token: &str) -> bool {
    token == "(" || token == ")" || (token.len() > 1 && token.starts_with(':'))
}

fn characters(word: &str) -> Vec<Subword> {
    let n = word.chars().count();
    word.chars().enumerate().map(|(i, c)| Subword::new(c.to_string(), i + 1 == n)).collect()
}

type Pair = (Subword, Subword);

/// Learned merges plus the shared token/id map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeModel {
    merges: Vec<Pair>,
    ranks: HashMap<Pair, usize>,
    /// Learned tokens in id order, starting at id `RESERVED`.
    tokens: Vec<Subword>,
    counts: Vec<u64>,
    ids: HashMap<Subword, u32>,
}

/// Learns `num_merges` merges over all tokens of all corpora.
///
/// Each step merges the most frequent adjacent pair; ties go to the
/// smallest pair. Stops early when no pair is left.
pub fn learn_bpe<'a>(tokens: impl IntoIterator<Item = &'a str>, num_merges: usize) -> Result<BpeModel, BpeError> {
    let mut word_freq: HashMap<&str, u64> = HashMap::new();
    let mut protected: BTreeMap<String, u64> = BTreeMap::new();
    let mut any = false;
    for t in tokens {
        any = true;
        if is_protected(t) {
            *protected.entry(t.to_string()).or_default() += 1;
        } else if !t.is_empty() {
            *word_freq.entry(t).or_default() += 1;
        }
    }
    if !any {
        return Err(BpeError::EmptyCorpus);
    }
    let mut words: Vec<(&str, u64)> = word_freq.into_iter().collect();
    words.sort_unstable();
    let mut segs: Vec<(Vec<Subword>, u64)> = words.iter().map(|&(w, f)| (characters(w), f)).collect();

    let mut alphabet: HashSet<Subword> = HashSet::new();
    for (s, _) in &segs {
        alphabet.extend(s.iter().cloned());
    }
    let mut merges: Vec<Pair> = Vec::with_capacity(num_merges);
    for _ in 0..num_merges {
        let mut counts: HashMap<(&Subword, &Subword), u64> = HashMap::new();
        for (s, f) in &segs {
            for w in s.windows(2) {
                *counts.entry((&w[0], &w[1])).or_default() += f;
            }
        }
        let Some(best) = counts
            .into_iter()
            .max_by(|(a, ca), (b, cb)| ca.cmp(cb).then_with(|| b.cmp(a)))
            .map(|((l, r), _)| (l.clone(), r.clone()))
        else {
            break;
        };
        for (s, _) in &mut segs {
            merge_pair(s, &best);
        }
        merges.push(best);
    }

    let mut tokens: Vec<Subword> = alphabet.into_iter().collect();
    tokens.sort_unstable();
    let mut model = BpeModel::from_merges(merges, Vec::new());
    for t in tokens {
        model.add_token(t);
    }
    for (l, r) in model.merges.clone() {
        model.add_token(joined(&l, &r));
    }
    for p in protected.keys() {
        model.add_token(Subword::new(p.clone(), true));
    }
    for (s, f) in &segs {
        for sub in s {
            let id = model.ids[sub] as usize - RESERVED;
            model.counts[id] += f;
        }
    }
    for (p, f) in protected {
        let id = model.ids[&Subword::new(p, true)] as usize - RESERVED;
        model.counts[id] += f;
    }
    Ok(model)
}

fn joined(l: &Subword, r: &Subword) -> Subword {
    Subword::new(format!("{}{}", l.text, r.text), r.word_end)
}

fn merge_pair(s: &mut Vec<Subword>, pair: &Pair) {
    if s.len() < 2 {
        return;
    }
    let mut out = Vec::with_capacity(s.len());
    let mut i = 0;
    while i < s.len() {
        if i + 1 < s.len() && s[i] == pair.0 && s[i + 1] == pair.1 {
            out.push(joined(&s[i], &s[i + 1]));
            i += 2;
        } else {
            out.push(s[i].clone());
            i += 1;
        }
    }
    *s = out;
}

impl BpeModel {
    fn from_merges(merges: Vec<Pair>, tokens: Vec<(Subword, u64)>) -> Self {
        let ranks = merges.iter().enumerate().map(|(i, p)| (p.clone(), i)).collect();
        let mut model = BpeModel { merges, ranks, tokens: Vec::new(), counts: Vec::new(), ids: HashMap::new() };
        for (t, c) in tokens {
            if model.add_token(t) {
                *model.counts.last_mut().expect("just added") = c;
            }
        }
        model
    }

    fn add_token(&mut self, t: Subword) -> bool {
        if self.ids.contains_key(&t) {
            return false;
        }
        self.ids.insert(t.clone(), (RESERVED + self.tokens.len()) as u32);
        self.tokens.push(t);
        self.counts.push(0);
        true
    }

    pub fn merges(&self) -> &[(Subword, Subword)] {
        &self.merges
    }

    /// Total number of ids, reserved ones included.
    pub fn vocab_size(&self) -> usize {
        RESERVED + self.tokens.len()
    }

    /// Segments one word.
    pub fn segment(&self, word: &str) -> Vec<Subword> {
        if is_protected(word) {
            return vec![Subword::new(word, true)];
        }
        let mut s = characters(word);
        loop {
            let best = s
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())).map(|&r| (r, w)))
                .min_by_key(|(r, _)| *r)
                .map(|(_, w)| (w[0].clone(), w[1].clone()));
            match best {
                Some(pair) => merge_pair(&mut s, &pair),
                None => return s,
            }
        }
    }

    /// Segments every token of `seq`.
    pub fn apply(&self, seq: &LinearSeq) -> Vec<Subword> {
        seq.tokens.iter().flat_map(|t| self.segment(t)).collect()
    }

    /// Joins pieces back into tokens; a trailing unfinished word is kept.
    pub fn decode(&self, subwords: &[Subword], kind: SeqKind) -> LinearSeq {
        let mut tokens = Vec::new();
        let mut word = String::new();
        let mut open = false;
        for s in subwords {
            word.push_str(&s.text);
            open = true;
            if s.word_end {
                tokens.push(std::mem::take(&mut word));
                open = false;
            }
        }
        if open {
            tokens.push(word);
        }
        LinearSeq::new(tokens, kind)
    }

    pub fn token_id(&self, s: &Subword) -> u32 {
        self.ids.get(s).copied().unwrap_or(UNK)
    }

    pub fn to_ids(&self, subwords: &[Subword]) -> Vec<u32> {
        subwords.iter().map(|s| self.token_id(s)).collect()
    }

    /// Segments and maps to ids in one go.
    pub fn encode(&self, seq: &LinearSeq) -> Vec<u32> {
        self.to_ids(&self.apply(seq))
    }

    pub fn tag_id(&self, index: usize) -> u32 {
        assert!(index < TAG_TOKENS.len(), "no tag {index}");
        (SPECIAL_TOKENS.len() + index) as u32
    }

    pub fn is_tag(&self, id: u32) -> bool {
        (SPECIAL_TOKENS.len()..RESERVED).contains(&(id as usize))
    }

    /// Display form of any id.
    pub fn id_to_string(&self, id: u32) -> String {
        let i = id as usize;
        if i < SPECIAL_TOKENS.len() {
            SPECIAL_TOKENS[i].to_string()
        } else if i < RESERVED {
            TAG_TOKENS[i - SPECIAL_TOKENS.len()].to_string()
        } else {
            self.tokens.get(i - RESERVED).map_or_else(|| SPECIAL_TOKENS[UNK as usize].to_string(), Subword::to_text)
        }
    }

    /// Pieces for ids; pad, bos, eos and tags are dropped, unk becomes `<unk>`.
    pub fn from_ids(&self, ids: &[u32]) -> Vec<Subword> {
        ids.iter()
            .filter_map(|&id| {
                let i = id as usize;
                if i >= RESERVED {
                    self.tokens.get(i - RESERVED).cloned()
                } else if id == UNK {
                    Some(Subword::new(SPECIAL_TOKENS[UNK as usize], true))
                } else {
                    None
                }
            })
            .collect()
    }

    /// Ids back to a token sequence.
    pub fn decode_ids(&self, ids: &[u32], kind: SeqKind) -> LinearSeq {
        self.decode(&self.from_ids(ids), kind)
    }

    /// One `left right` pair per line, word-final pieces suffixed `</w>`.
    pub fn merges_to_string(&self) -> String {
        let mut out = String::new();
        for (l, r) in &self.merges {
            let _ = writeln!(out, "{} {}", l.merge_form(), r.merge_form());
        }
        out
    }

    /// Learned tokens in id order as `token<TAB>count`.
    pub fn vocab_to_string(&self) -> String {
        let mut out = String::new();
        for (t, c) in self.tokens.iter().zip(&self.counts) {
            let _ = writeln!(out, "{}\t{c}", t.to_text());
        }
        out
    }

    pub fn from_files(merges: &str, vocab: &str) -> Result<Self, BpeError> {
        let mut pairs = Vec::new();
        for (i, line) in merges.lines().enumerate() {
            if line.starts_with("#version") || line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(' ').collect();
            if parts.len() != 2 || parts.iter().any(|p| p.is_empty()) {
                return Err(BpeError::BadMergeFile { line: i + 1, message: "expected two symbols".into() });
            }
            pairs.push((Subword::from_merge_form(parts[0]), Subword::from_merge_form(parts[1])));
        }
        let mut tokens = Vec::new();
        for (i, line) in vocab.lines().enumerate() {
            let Some((tok, count)) = line.rsplit_once('\t') else {
                return Err(BpeError::BadVocabFile { line: i + 1, message: "expected token<TAB>count".into() });
            };
            let count = count
                .parse()
                .map_err(|_| BpeError::BadVocabFile { line: i + 1, message: format!("bad count `{count}`") })?;
            tokens.push((Subword::from_text(tok), count));
        }
        Ok(BpeModel::from_merges(pairs, tokens))
    }

    /// Hex SHA-256 of the merge and vocabulary files.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.merges_to_string());
        h.update([0u8]);
        h.update(self.vocab_to_string());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Text form of a segmentation, `@@` marking continued pieces.
pub fn subwords_to_text(subwords: &[Subword]) -> String {
    subwords.iter().map(Subword::to_text).collect::<Vec<_>>().join(" ")
}

pub fn subwords_from_text(line: &str) -> Vec<Subword> {
    line.split_whitespace().map(Subword::from_text).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sw(t: &str, e: bool) -> Subword {
        Subword::new(t, e)
    }

    #[test]
    fn merge_order_on_low_lower() {
        let m = learn_bpe("low low lower".split(' '), 10).unwrap();
        let expected = vec![
            (sw("l", false), sw("o", false)),
            (sw("lo", false), sw("w", true)),
            (sw("e", false), sw("r", true)),
            (sw("lo", false), sw("w", false)),
            (sw("low", false), sw("er", true)),
        ];
        assert_eq!(m.merges(), expected.as_slice());
        assert_eq!(m.segment("lower"), [sw("lower", true)]);
        assert_eq!(m.segment("low"), [sw("low", true)]);
    }

    #[test]
    fn zero_merges_is_characters() {
        let m = learn_bpe("low lower".split(' '), 0).unwrap();
        assert!(m.merges().is_empty());
        assert!(m.tokens.iter().all(|t| t.text.chars().count() == 1));
        assert_eq!(m.segment("low").len(), 3);
    }

    #[test]
    fn empty_corpus() {
        assert_eq!(learn_bpe(std::iter::empty(), 5), Err(BpeError::EmptyCorpus));
    }

    #[test]
    fn deterministic() {
        let text = "the cat sat on the mat ( want-01 :ARG0 ( boy ) )";
        let a = learn_bpe(text.split(' '), 20).unwrap();
        let b = learn_bpe(text.split(' '), 20).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn protected_tokens_stay_whole() {
        let m = learn_bpe("( want-01 :ARG0 ( boy ) )".split(' '), 3).unwrap();
        let seq = LinearSeq::from_line("( go-01 :ARG0 ( girl ) :ARG1 )", SeqKind::Amr);
        let subs = m.apply(&seq);
        assert!(subs.contains(&sw(":ARG0", true)));
        assert!(subs.contains(&sw(":ARG1", true)));
        assert_eq!(m.decode(&subs, SeqKind::Amr), seq);
        let ids = m.to_ids(&subs);
        assert_ne!(ids[2], UNK);
        assert_eq!(ids[ids.len() - 2], UNK);
    }

    #[test]
    fn unknown_characters_become_unk() {
        let m = learn_bpe("abc".split(' '), 2).unwrap();
        let ids = m.encode(&LinearSeq::from_line("abz", SeqKind::Sentence));
        assert_eq!(*ids.last().unwrap(), UNK);
        assert_eq!(m.decode_ids(&ids, SeqKind::Sentence).tokens, ["ab<unk>"]);
    }

    #[test]
    fn text_forms() {
        let subs = vec![sw("lo", false), sw("wer", true), sw(":ARG0", true)];
        assert_eq!(subwords_to_text(&subs), "lo@@ wer :ARG0");
        assert_eq!(subwords_from_text("lo@@ wer :ARG0"), subs);
    }

    #[test]
    fn files_round_trip() {
        let m = learn_bpe("low low lower newest widest ( :ARG0 )".split(' '), 8).unwrap();
        let back = BpeModel::from_files(&m.merges_to_string(), &m.vocab_to_string()).unwrap();
        assert_eq!(back, m);
        assert_eq!(m.merges_to_string().lines().next(), Some("l o"));
    }

    #[test]
    fn reserved_ids() {
        let m = learn_bpe("a".split(' '), 0).unwrap();
        assert_eq!(m.vocab_size(), RESERVED + 1);
        assert_eq!(m.id_to_string(PAD), "<pad>");
        assert_eq!(m.id_to_string(m.tag_id(2)), "<to_amr>");
        assert!(m.is_tag(m.tag_id(0)) && !m.is_tag(UNK) && !m.is_tag(RESERVED as u32));
        assert!(m.from_ids(&[BOS, m.tag_id(1), RESERVED as u32, EOS]).len() == 1);
    }
}
