use poolrank::textproc::porter_stem;

#[test]
fn stems_match_reference_word_list() {
    let data = include_str!("data/porter_vocabulary.txt");
    let mut checked = 0;
    let mut wrong = Vec::new();
    for line in data.lines().filter(|l| !l.trim().is_empty()) {
        let (word, stem) = line.split_once(' ').expect("word and stem");
        let got = porter_stem(word);
        if got != stem {
            wrong.push(format!("{word}: got {got}, want {stem}"));
        }
        checked += 1;
    }
    assert!(checked > 10_000);
    assert!(wrong.is_empty(), "{} mismatches, first: {:?}", wrong.len(), &wrong[..wrong.len().min(10)]);
}
