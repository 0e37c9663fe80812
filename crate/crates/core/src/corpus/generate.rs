//! Latent-intent search-log simulator.
//!
//! A synthetic lexicon is split into categories, products (each belonging to
//! one category), brands and modifiers. An intent picks one of each. Every
//! pair is built from a query intent and a listing intent derived from it
//! through a [`Relation`]; the graded label is a step function of how many
//! latent attributes the two intents share, so it is monotone in overlap by
//! construction. Text only partially reveals the intent (queries drop brand
//! or modifier at random), leaving annotators some irreducible error.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{AdListing, CorpusSpec, GradedLabel, LabeledSample, UnlabeledPair};
use crate::error::Result;
use crate::seed;

pub(super) const MIN_VOCAB: usize = 40;

const FILLERS: [&str; 12] =
    ["buy", "cheap", "best", "online", "sale", "shop", "new", "official", "store", "deals", "free", "top"];
const CONSONANTS: &[u8] = b"bcdfghjklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

#[derive(Clone, Debug)]
struct Lexicon {
    categories: Vec<String>,
    products: Vec<String>,
    product_category: Vec<usize>,
    brands: Vec<String>,
    modifiers: Vec<String>,
}

impl Lexicon {
    fn build(vocab_size: usize, rng: &mut ChaCha8Rng) -> Self {
        let n_cat = (vocab_size / 20).max(4);
        let n_prod = (vocab_size * 2 / 5).max(2 * n_cat);
        let n_brand = (vocab_size * 3 / 10).max(6);
        let n_mod = vocab_size.saturating_sub(n_cat + n_prod + n_brand).max(4);
        let mut seen: HashSet<String> = FILLERS.iter().map(|s| s.to_string()).collect();
        let mut words = |n: usize, rng: &mut ChaCha8Rng| -> Vec<String> {
            let mut out = Vec::with_capacity(n);
            while out.len() < n {
                let syllables = rng.gen_range(2..=3);
                let mut w = String::new();
                for _ in 0..syllables {
                    w.push(CONSONANTS[rng.gen_range(0..CONSONANTS.len())] as char);
                    w.push(VOWELS[rng.gen_range(0..VOWELS.len())] as char);
                }
                if seen.insert(w.clone()) {
                    out.push(w);
                }
            }
            out
        };
        let categories = words(n_cat, rng);
        let products = words(n_prod, rng);
        let brands = words(n_brand, rng);
        let modifiers = words(n_mod, rng);
        let product_category = (0..n_prod).map(|p| p % n_cat).collect();
        Self { categories, products, product_category, brands, modifiers }
    }

    fn random_intent(&self, rng: &mut ChaCha8Rng) -> Intent {
        let product = rng.gen_range(0..self.products.len());
        Intent {
            category: self.product_category[product],
            product,
            brand: rng.gen_range(0..self.brands.len()),
            modifier: rng.gen_range(0..self.modifiers.len()),
        }
    }

    fn other(n: usize, not: usize, rng: &mut ChaCha8Rng) -> usize {
        loop {
            let v = rng.gen_range(0..n);
            if v != not {
                return v;
            }
        }
    }

    /// Listing intent standing in `relation` to `q`.
    fn relate(&self, q: Intent, relation: Relation, rng: &mut ChaCha8Rng) -> Intent {
        let mut l = q;
        match relation {
            Relation::Exact => {}
            Relation::SwapModifier => l.modifier = Self::other(self.modifiers.len(), q.modifier, rng),
            Relation::SwapBrand => {
                l.brand = Self::other(self.brands.len(), q.brand, rng);
                l.modifier = rng.gen_range(0..self.modifiers.len());
            }
            Relation::SameBrandCategory => {
                l.product = self.product_in(q.category, Some(q.product), rng);
                l.modifier = rng.gen_range(0..self.modifiers.len());
            }
            Relation::SameCategory => {
                l.product = self.product_in(q.category, Some(q.product), rng);
                l.brand = Self::other(self.brands.len(), q.brand, rng);
                l.modifier = rng.gen_range(0..self.modifiers.len());
            }
            Relation::SameBrandOther => {
                let cat = Self::other(self.categories.len(), q.category, rng);
                l.category = cat;
                l.product = self.product_in(cat, None, rng);
                l.modifier = rng.gen_range(0..self.modifiers.len());
            }
            Relation::Unrelated => {
                let cat = Self::other(self.categories.len(), q.category, rng);
                l.category = cat;
                l.product = self.product_in(cat, None, rng);
                l.brand = Self::other(self.brands.len(), q.brand, rng);
                l.modifier = rng.gen_range(0..self.modifiers.len());
            }
        }
        l
    }

    fn product_in(&self, category: usize, not: Option<usize>, rng: &mut ChaCha8Rng) -> usize {
        let n_cat = self.categories.len();
        let per_cat = self.products.len().div_ceil(n_cat);
        loop {
            let p = category + n_cat * rng.gen_range(0..per_cat);
            if p < self.products.len() && Some(p) != not {
                return p;
            }
        }
    }

    fn filler(rng: &mut ChaCha8Rng) -> &'static str {
        FILLERS[rng.gen_range(0..FILLERS.len())]
    }

    fn render_query(&self, i: Intent, rng: &mut ChaCha8Rng) -> String {
        let mut words: Vec<&str> = Vec::new();
        if rng.gen_bool(0.5) {
            words.push(&self.modifiers[i.modifier]);
        }
        if rng.gen_bool(0.75) {
            words.push(&self.brands[i.brand]);
        }
        words.push(&self.products[i.product]);
        if rng.gen_bool(0.2) {
            words.push(&self.categories[i.category]);
        }
        if rng.gen_bool(0.25) {
            let f = Self::filler(rng);
            if rng.gen_bool(0.5) {
                words.insert(0, f);
            } else {
                words.push(f);
            }
        }
        words.join(" ")
    }

    fn render_listing(&self, i: Intent, lp_on_topic: bool, rng: &mut ChaCha8Rng) -> AdListing {
        let (brand, product) = (&self.brands[i.brand], &self.products[i.product]);
        let modifier = &self.modifiers[i.modifier];
        let category = &self.categories[i.category];

        let keyword = if rng.gen_bool(0.4) { format!("{modifier} {brand} {product}") } else { format!("{brand} {product}") };

        let mut title = vec![brand.as_str()];
        if rng.gen_bool(0.7) {
            title.push(modifier);
        }
        title.push(product);
        title.insert(0, Self::filler(rng));
        if rng.gen_bool(0.5) {
            title.push(Self::filler(rng));
        }

        let mut lp = vec![brand.as_str(), category.as_str()];
        if lp_on_topic {
            lp.push(product);
        }
        if rng.gen_bool(0.5) {
            lp.push(Self::filler(rng));
        }
        AdListing::new(keyword, title.join(" "), lp.join(" "))
    }
}

/// Latent search intent: indices into the generator's lexicon.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Intent {
    pub category: usize,
    pub product: usize,
    pub brand: usize,
    pub modifier: usize,
}

/// How a listing's intent relates to the query's.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    /// All four attributes shared.
    Exact,
    /// Product and brand shared, modifier differs.
    SwapModifier,
    /// Product shared, brand differs.
    SwapBrand,
    /// Brand and category shared, product differs.
    SameBrandCategory,
    /// Only the category is shared.
    SameCategory,
    /// Only the brand is shared.
    SameBrandOther,
    /// Nothing but possibly the modifier is shared.
    Unrelated,
}

impl Relation {
    /// Impression mix of labeled, unlabeled and test pairs. Most pairs are
    /// related to the query the way retrieved ads are; pairs sitting exactly
    /// on the grade-1 boundary are kept rare.
    const MIX: [(Relation, f64); 7] = [
        (Relation::Exact, 0.15),
        (Relation::SwapModifier, 0.15),
        (Relation::SwapBrand, 0.20),
        (Relation::SameBrandCategory, 0.05),
        (Relation::SameCategory, 0.15),
        (Relation::SameBrandOther, 0.20),
        (Relation::Unrelated, 0.10),
    ];

    fn sample(rng: &mut ChaCha8Rng) -> Relation {
        let mut u: f64 = rng.gen();
        for (r, p) in Self::MIX {
            if u < p {
                return r;
            }
            u -= p;
        }
        Relation::Unrelated
    }

    fn sample_highly_relevant(rng: &mut ChaCha8Rng) -> Relation {
        if rng.gen_bool(0.5) {
            Relation::Exact
        } else {
            Relation::SwapModifier
        }
    }
}

/// Weighted count of shared latent attributes (product 8, brand 4,
/// category 3, modifier 1).
fn overlap(q: Intent, l: Intent) -> u32 {
    8 * u32::from(q.product == l.product)
        + 4 * u32::from(q.brand == l.brand)
        + 3 * u32::from(q.category == l.category)
        + u32::from(q.modifier == l.modifier)
}

/// Graded label of a (query intent, listing intent) pair. The AC grade is a
/// step function of attribute overlap; the LP grade adds one when the
/// product matches and the landing page actually covers it.
pub fn grade(q: Intent, l: Intent, lp_on_topic: bool) -> GradedLabel {
    let o = overlap(q, l);
    let ac = match o {
        16.. => 4,
        15 => 3,
        11..=14 => 2,
        7..=10 => 1,
        _ => 0,
    };
    let lp = ac + u8::from(ac >= 2 && lp_on_topic);
    GradedLabel::new(ac, lp).expect("grades in range by construction")
}

/// Generated datasets plus the hidden grades of the unlabeled and clicked
/// rows (kept for diagnostics, never written to the TSV files).
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub labeled: Vec<LabeledSample>,
    pub unlabeled: Vec<UnlabeledPair>,
    pub clicked: Vec<UnlabeledPair>,
    pub test: Vec<LabeledSample>,
    pub unlabeled_truth: Vec<GradedLabel>,
    pub clicked_truth: Vec<GradedLabel>,
}

struct Generator {
    lexicon: Lexicon,
    intents: Vec<Intent>,
}

impl Generator {
    fn pair(&self, relation: Relation, lp_on_topic: Option<bool>, rng: &mut ChaCha8Rng) -> (String, AdListing, GradedLabel) {
        let q = self.intents[rng.gen_range(0..self.intents.len())];
        let l = self.lexicon.relate(q, relation, rng);
        let on_topic = lp_on_topic.unwrap_or_else(|| rng.gen_bool(0.75));
        let query = self.lexicon.render_query(q, rng);
        let listing = self.lexicon.render_listing(l, on_topic, rng);
        (query, listing, grade(q, l, on_topic))
    }

    fn labeled(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<LabeledSample> {
        // A fixed head guarantees every AC and LP grade occurs.
        let head = [
            (Relation::Exact, Some(true)),
            (Relation::Exact, Some(false)),
            (Relation::SwapModifier, Some(true)),
            (Relation::SwapModifier, Some(false)),
            (Relation::SwapBrand, Some(true)),
            (Relation::SwapBrand, Some(false)),
            (Relation::SameBrandCategory, None),
            (Relation::Unrelated, None),
        ];
        let mut out: Vec<LabeledSample> = (0..n)
            .map(|i| {
                let (rel, topic) = head.get(i).copied().unwrap_or_else(|| (Relation::sample(rng), None));
                let (query, listing, label) = self.pair(rel, topic, rng);
                LabeledSample { query, listing, label }
            })
            .collect();
        out.shuffle(rng);
        out
    }
}

/// Generates labeled, unlabeled, clicked and test sets. A pure function of
/// `spec`: every set draws from its own seeded stream.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let lexicon = Lexicon::build(spec.vocab_size, &mut seed::rng(spec.seed, "lexicon"));
    let mut rng = seed::rng(spec.seed, "intents");
    let intents = (0..spec.n_intents).map(|_| lexicon.random_intent(&mut rng)).collect();
    let gen = Generator { lexicon, intents };

    let labeled = gen.labeled(spec.n_labeled, &mut seed::rng(spec.seed, "labeled"));
    let test = gen.labeled(spec.n_test, &mut seed::rng(spec.seed, "test"));

    let mut rng = seed::rng(spec.seed, "unlabeled");
    let (unlabeled, unlabeled_truth) = (0..spec.n_unlabeled)
        .map(|_| {
            let (query, listing, label) = gen.pair(Relation::sample(&mut rng), None, &mut rng);
            (UnlabeledPair { query, listing, clicked: None }, label)
        })
        .unzip();

    let mut rng = seed::rng(spec.seed, "clicked");
    let (clicked, clicked_truth) = (0..spec.n_clicked)
        .map(|_| {
            let rel = if rng.gen_bool(spec.click_noise_rate) {
                // a familiar brand drawing the click to the wrong product
                Relation::SameBrandOther
            } else {
                Relation::sample_highly_relevant(&mut rng)
            };
            let (query, listing, label) = gen.pair(rel, None, &mut rng);
            (UnlabeledPair { query, listing, clicked: Some(true) }, label)
        })
        .unzip();

    Ok(Corpus { labeled, unlabeled, clicked, test, unlabeled_truth, clicked_truth })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> CorpusSpec {
        CorpusSpec {
            n_intents: 200,
            vocab_size: 300,
            n_labeled: 100,
            n_unlabeled: 50,
            n_clicked: 50,
            n_test: 20,
            click_noise_rate: 0.1,
            seed: 7,
        }
    }

    #[test]
    fn full_overlap_is_top_grade() {
        let i = Intent { category: 1, product: 5, brand: 2, modifier: 3 };
        let g = grade(i, i, true);
        assert_eq!((g.ac(), g.lp()), (4, 5));
        assert_eq!(grade(i, i, false).lp(), 4);
    }

    #[test]
    fn grades_per_relation() {
        let spec = spec();
        let lex = Lexicon::build(spec.vocab_size, &mut seed::rng(1, "lex"));
        let mut rng = seed::rng(1, "rel");
        for _ in 0..200 {
            let q = lex.random_intent(&mut rng);
            let expect = [
                (Relation::Exact, 4..=4),
                (Relation::SwapModifier, 3..=3),
                (Relation::SwapBrand, 2..=2),
                (Relation::SameBrandCategory, 1..=1),
                (Relation::SameCategory, 0..=0),
                (Relation::SameBrandOther, 0..=0),
                (Relation::Unrelated, 0..=0),
            ];
            for (rel, range) in expect {
                let l = lex.relate(q, rel, &mut rng);
                assert!(range.contains(&grade(q, l, true).ac()), "{rel:?}");
                assert_eq!(l.category, lex.product_category[l.product]);
            }
        }
    }

    #[test]
    fn generation_is_deterministic_and_covers_all_grades() {
        let a = generate_corpus(&spec()).unwrap();
        let b = generate_corpus(&spec()).unwrap();
        assert_eq!(a, b);
        let acs: HashSet<u8> = a.labeled.iter().map(|s| s.label.ac()).collect();
        let lps: HashSet<u8> = a.labeled.iter().map(|s| s.label.lp()).collect();
        assert_eq!(acs.len(), 5);
        assert_eq!(lps.len(), 6);
        assert_eq!(a.test.len(), 20);
        assert!(a.clicked.iter().all(|c| c.clicked == Some(true)));
    }

    #[test]
    fn text_fields_are_normalized_and_non_empty() {
        let c = generate_corpus(&spec()).unwrap();
        let ok = |s: &str| !s.is_empty() && s.chars().all(|ch| ch.is_ascii_lowercase() || ch == ' ');
        for s in &c.labeled {
            assert!(ok(&s.query) && ok(&s.listing.keyword) && ok(&s.listing.ad_title) && ok(&s.listing.lp_title));
        }
    }

    #[test]
    fn grade_is_monotone_in_overlap() {
        let q = Intent { category: 0, product: 0, brand: 0, modifier: 0 };
        let mut cases = Vec::new();
        for bits in 0..16u32 {
            let (p, b, c, m) = (bits & 1 != 0, bits & 2 != 0, bits & 4 != 0, bits & 8 != 0);
            if p && !c {
                continue;
            }
            let l = Intent { category: usize::from(!c), product: usize::from(!p), brand: usize::from(!b), modifier: usize::from(!m) };
            cases.push((overlap(q, l), grade(q, l, true), grade(q, l, false)));
        }
        for a in &cases {
            for b in &cases {
                if a.0 >= b.0 {
                    assert!(a.1.ac() >= b.1.ac() && a.1.lp() >= b.1.lp() && a.2.lp() >= b.2.lp());
                }
            }
        }
    }

    #[test]
    fn click_contamination_matches_noise_rate() {
        let mut s = spec();
        s.n_clicked = 10_000;
        let c = generate_corpus(&s).unwrap();
        let noisy = c.clicked_truth.iter().filter(|l| l.ac() == 0).count() as f64 / 10_000.0;
        assert!((noisy - 0.1).abs() <= 0.01, "{noisy}");
        assert!(c.clicked_truth.iter().all(|l| l.ac() == 0 || l.ac() >= 3));
    }

    #[test]
    fn invalid_spec_is_a_config_error() {
        let mut s = spec();
        s.click_noise_rate = 1.0;
        assert!(matches!(generate_corpus(&s), Err(crate::Error::Config(_))));
        let mut s = spec();
        s.n_clicked = 0;
        assert!(generate_corpus(&s).is_err());
    }
}
