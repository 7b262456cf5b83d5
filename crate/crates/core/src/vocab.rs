//! Word vocabulary (embedding rows) and the per-example output token space.
//!
//! The output vocabulary is three-way: fixed SQL tokens, per-example column
//! ids, and question words. Distributions and grammar masks index the flat
//! per-example space `[SQL | columns | distinct question words]`; words not
//! present in the question have probability exactly zero and simply do not
//! appear.

use std::collections::HashMap;

use crate::query_ast::{SqlTok, Token, SQL_VOCAB};

/// Word-to-embedding-row mapping. Row 0 is the rare-word representation;
/// out-of-vocabulary words map there. Persisted as a word list; rebuild with
/// [`Vocab::from_words`].
#[derive(Clone, Debug)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

pub const RARE_TOKEN: &str = "<rare>";

impl Vocab {
    pub const RARE: usize = 0;

    /// Keep words seen at least `min_freq` times, plus any word that has a
    /// pretrained vector; everything else is replaced by the rare token.
    pub fn build<'a>(
        corpus: impl Iterator<Item = &'a str>,
        min_freq: usize,
        pretrained: Option<&std::collections::HashSet<String>>,
    ) -> Vocab {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut order: Vec<&str> = Vec::new();
        for w in corpus {
            let c = counts.entry(w).or_insert(0);
            if *c == 0 {
                order.push(w);
            }
            *c += 1;
        }
        let mut words = vec![RARE_TOKEN.to_string()];
        for w in order {
            let keep = counts[w] >= min_freq || pretrained.is_some_and(|p| p.contains(w));
            if keep {
                words.push(w.to_string());
            }
        }
        Vocab::from_words(words)
    }

    /// Rebuild from a saved word list (first entry must be the rare token).
    pub fn from_words(words: Vec<String>) -> Vocab {
        assert_eq!(words.first().map(String::as_str), Some(RARE_TOKEN));
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Vocab { words, index }
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(Self::RARE)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

/// Flat index layout over one example's decodable tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSpace {
    n_cols: usize,
    question: Vec<String>,
    distinct: Vec<String>,
    word_idx: HashMap<String, usize>,
    /// Question positions per distinct word, in question order.
    segments: Vec<Vec<usize>>,
}

impl TokenSpace {
    pub fn new(question: &[String], n_cols: usize) -> TokenSpace {
        let mut distinct = Vec::new();
        let mut word_idx = HashMap::new();
        let mut segments: Vec<Vec<usize>> = Vec::new();
        for (pos, w) in question.iter().enumerate() {
            let slot = *word_idx.entry(w.clone()).or_insert_with(|| {
                distinct.push(w.clone());
                segments.push(Vec::new());
                distinct.len() - 1
            });
            segments[slot].push(pos);
        }
        TokenSpace {
            n_cols,
            question: question.to_vec(),
            distinct,
            word_idx,
            segments,
        }
    }

    pub fn len(&self) -> usize {
        SQL_VOCAB + self.n_cols + self.distinct.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn num_cols(&self) -> usize {
        self.n_cols
    }

    pub fn question(&self) -> &[String] {
        &self.question
    }

    pub fn distinct_words(&self) -> &[String] {
        &self.distinct
    }

    /// Positions of each distinct word in the question (pointer segments).
    pub fn segments(&self) -> &[Vec<usize>] {
        &self.segments
    }

    pub fn sql_index(&self, t: SqlTok) -> usize {
        t.index()
    }

    pub fn col_index(&self, col: usize) -> usize {
        assert!(col < self.n_cols);
        SQL_VOCAB + col
    }

    pub fn word_slot(&self, word: &str) -> Option<usize> {
        self.word_idx.get(word).copied()
    }

    pub fn word_index(&self, word: &str) -> Option<usize> {
        self.word_slot(word).map(|i| SQL_VOCAB + self.n_cols + i)
    }

    /// Flat index of a token; None when the token is not decodable for this
    /// example (word absent from the question, column out of range).
    pub fn token_index(&self, tok: &Token) -> Option<usize> {
        match tok {
            Token::Sql(s) => Some(s.index()),
            Token::Col(c) if *c < self.n_cols => Some(self.col_index(*c)),
            Token::Col(_) => None,
            Token::Word(w) => self.word_index(w),
        }
    }

    pub fn token_at(&self, idx: usize) -> Token {
        if idx < SQL_VOCAB {
            Token::Sql(SqlTok::from_index(idx).unwrap())
        } else if idx < SQL_VOCAB + self.n_cols {
            Token::Col(idx - SQL_VOCAB)
        } else {
            Token::Word(self.distinct[idx - SQL_VOCAB - self.n_cols].clone())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rare_words_replaced_pretrained_kept() {
        let corpus = ["the", "the", "cat", "sat", "sat", "glove"];
        let mut pre = std::collections::HashSet::new();
        pre.insert("glove".to_string());
        let v = Vocab::build(corpus.iter().copied(), 2, Some(&pre));
        assert_eq!(v.id("the"), 1);
        assert_eq!(v.id("cat"), Vocab::RARE); // freq 1, no vector
        assert!(v.id("glove") > 0); // freq 1 but pretrained
        assert_eq!(v.id("unseen"), Vocab::RARE);
    }

    #[test]
    fn token_space_round_trips_all_indices() {
        let q: Vec<String> = ["a", "b", "a", "c"].iter().map(|s| s.to_string()).collect();
        let space = TokenSpace::new(&q, 3);
        assert_eq!(space.len(), SQL_VOCAB + 3 + 3);
        assert_eq!(space.segments()[0], vec![0, 2]); // "a"
        for idx in 0..space.len() {
            let tok = space.token_at(idx);
            assert_eq!(space.token_index(&tok), Some(idx));
        }
        assert_eq!(space.token_index(&Token::Word("zzz".into())), None);
    }
}
