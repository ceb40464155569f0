//! Frozen 5-item caption-metric fixture with independently derived oracle
//! values (computed by hand from the metric definitions, not by this crate).

use diffcap_core::eval::{bleu, cider_d, rouge_l};

pub fn fixture() -> (Vec<String>, Vec<Vec<String>>) {
    let rows: [(&str, &[&str]); 5] = [
        (
            "the red ball moved",
            &["the red ball changed its location", "the red ball moved"],
        ),
        ("there is no change", &["there is no difference"]),
        ("a green block was added", &["a green block was added"]),
        (
            "the blue triangle became yellow",
            &[
                "the blue triangle changed to yellow",
                "the blue triangle became yellow now",
            ],
        ),
        ("the striped ball turned solid", &["the yellow ball became solid"]),
    ];
    let candidates = rows.iter().map(|(c, _)| c.to_string()).collect();
    let references = rows
        .iter()
        .map(|(_, rs)| rs.iter().map(|r| r.to_string()).collect())
        .collect();
    (candidates, references)
}

pub const ORACLE_BLEU4: f64 = 0.691282681158;
pub const ORACLE_ROUGE_L: f64 = 0.848885630499;
pub const ORACLE_CIDER_D: f64 = 5.757336960213;
pub const ORACLE_CIDER_PER_ITEM: [f64; 5] = [
    6.587472116590,
    4.791666666667,
    10.000000000000,
    6.070704770423,
    1.336841247384,
];

#[test]
fn bleu_matches_oracle() {
    let (c, r) = fixture();
    assert!((bleu(&c, &r, 4).unwrap() - ORACLE_BLEU4).abs() < 1e-6);
}

#[test]
fn rouge_l_matches_oracle() {
    let (c, r) = fixture();
    assert!((rouge_l(&c, &r).unwrap() - ORACLE_ROUGE_L).abs() < 1e-6);
}

#[test]
fn cider_d_matches_oracle_per_item_and_mean() {
    let (c, r) = fixture();
    let s = cider_d(&c, &r).unwrap();
    assert!((s.mean - ORACLE_CIDER_D).abs() < 1e-6);
    for (got, want) in s.per_item.iter().zip(ORACLE_CIDER_PER_ITEM) {
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }
}
