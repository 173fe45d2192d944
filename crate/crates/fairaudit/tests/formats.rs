use std::path::Path;

use fairaudit::io::{
    decode_annotations, decode_embeddings_binary, decode_embeddings_csv, decode_pairs, encode_annotations,
    encode_embeddings_binary, encode_embeddings_csv, encode_pairs, load_embeddings, write_embeddings, EmbeddingFormat,
};
use fairaudit::Error;
use fairaudit_core::{AgeBin, EmbeddingSet, Gender, Race, SampleAnnotation, VerificationPair};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mem() -> &'static Path {
    Path::new("mem")
}

/// Values are f32 so the binary format can hold them exactly.
fn random_set(rng: &mut ChaCha8Rng) -> EmbeddingSet {
    let n = rng.random_range(1..40);
    let dim = rng.random_range(1..20);
    let ids: Vec<String> = (0..n).map(|i| format!("s{i}_{}", rng.random_range(0..1000))).collect();
    let data: Vec<f64> = (0..n * dim)
        .map(|_| {
            let scale = 10f32.powi(rng.random_range(-30..30));
            (rng.random_range(-1.0f32..1.0) * scale) as f64
        })
        .collect();
    EmbeddingSet::new(dim, ids, data).unwrap()
}

fn bits(e: &EmbeddingSet) -> Vec<u64> {
    e.rows().flat_map(|r| r.iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect()
}

#[test]
fn hundred_random_matrices_round_trip_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let e = random_set(&mut rng);
        let bin = decode_embeddings_binary(&encode_embeddings_binary(&e).unwrap(), mem()).unwrap();
        let csv = decode_embeddings_csv(encode_embeddings_csv(&e).as_bytes(), mem()).unwrap();
        for back in [bin, csv] {
            assert_eq!(back.ids(), e.ids());
            assert_eq!(back.dim(), e.dim());
            assert_eq!(bits(&back), bits(&e));
        }
    }
}

#[test]
fn files_pick_their_format_from_the_extension() {
    let dir = tempfile::tempdir().unwrap();
    let e = random_set(&mut ChaCha8Rng::seed_from_u64(2));
    for (name, format) in [("e.faem", EmbeddingFormat::Binary), ("e.csv", EmbeddingFormat::Csv)] {
        let path = dir.path().join(name);
        write_embeddings(&path, &e, format).unwrap();
        assert_eq!(EmbeddingFormat::from_path(&path), format);
        assert_eq!(bits(&load_embeddings(&path, None).unwrap()), bits(&e));
    }
}

fn format_error(e: Error) -> (Option<usize>, String) {
    match e {
        Error::Format { row, message, .. } => (row, message),
        other => panic!("expected a format error, got {other}"),
    }
}

#[test]
fn csv_embedding_errors_name_the_row() {
    let cases = [
        ("sample_id,v0,v1\na,1,2\nb,1\n", Some(2), "dimension mismatch"),
        ("sample_id,v0\na,1\na,2\n", Some(2), "duplicate"),
        ("sample_id,v0\na,1\nb,NaN\n", Some(2), "non-finite"),
        ("sample_id,v0\na,one\n", Some(1), "not a number"),
        ("id,v0\na,1\n", None, "malformed header"),
        ("sample_id,v1\na,1\n", None, "malformed header"),
    ];
    for (text, row, needle) in cases {
        let (got_row, message) = format_error(decode_embeddings_csv(text.as_bytes(), mem()).unwrap_err());
        assert_eq!(got_row, row, "{text:?}");
        assert!(message.contains(needle), "{text:?}: {message}");
    }
}

#[test]
fn binary_embedding_errors() {
    let e = EmbeddingSet::new(2, vec!["a".into(), "b".into()], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let good = encode_embeddings_binary(&e).unwrap();

    let mut magic = good.clone();
    magic[0] = b'X';
    assert!(format_error(decode_embeddings_binary(&magic, mem()).unwrap_err()).1.contains("magic"));

    let (row, message) = format_error(decode_embeddings_binary(&good[..good.len() - 3], mem()).unwrap_err());
    assert!(row.is_none() || row == Some(2), "{message}");

    let mut trailing = good.clone();
    trailing.push(0);
    assert!(format_error(decode_embeddings_binary(&trailing, mem()).unwrap_err()).1.contains("trailing"));

    let mut nan = good.clone();
    let at = nan.len() - 4;
    nan[at..].copy_from_slice(&f32::NAN.to_le_bytes());
    assert_eq!(format_error(decode_embeddings_binary(&nan, mem()).unwrap_err()).0, Some(2));

    let mut version = good;
    version[4] = 9;
    assert!(format_error(decode_embeddings_binary(&version, mem()).unwrap_err()).1.contains("version"));

    let big = EmbeddingSet::new(1, vec!["x".into()], vec![1e300]).unwrap();
    assert!(encode_embeddings_binary(&big).is_err());
}

#[test]
fn annotations_and_pairs_round_trip() {
    let anns: Vec<SampleAnnotation> = (0..12)
        .map(|i| SampleAnnotation {
            sample_id: format!("s{i}"),
            identity_id: format!("p{}", i / 3),
            race: Race::ALL[i % 4],
            gender: Gender::ALL[i % 2],
            age_bin: AgeBin::new((i % 6) as u32).unwrap(),
        })
        .collect();
    assert_eq!(decode_annotations(encode_annotations(&anns).as_bytes(), mem()).unwrap(), anns);

    let pairs: Vec<VerificationPair> = (0..6)
        .map(|i| VerificationPair {
            a: format!("s{i}"),
            b: format!("s{}", i + 6),
            genuine: i % 2 == 0,
            fold: i as u32,
        })
        .collect();
    assert_eq!(decode_pairs(encode_pairs(&pairs).as_bytes(), mem()).unwrap(), pairs);
}

#[test]
fn annotation_and_pair_errors() {
    let h = "sample_id,identity_id,race,gender,age_bin\n";
    for (body, row) in [
        ("a,p,Martian,Male,1\n", 1),
        ("a,p,Asian,Male,1\nb,p,Asian,Other,1\n", 2),
        ("a,p,Asian,Male,6\n", 1),
        ("a,p,Asian,Male,x\n", 1),
        ("a,p,Asian,Male,1\na,p,Asian,Male,1\n", 2),
    ] {
        let err = decode_annotations(format!("{h}{body}").as_bytes(), mem()).unwrap_err();
        assert_eq!(format_error(err).0, Some(row), "{body:?}");
    }
    let h = "sample_a,sample_b,genuine,fold\n";
    for body in ["a,b,yes,0\n", "a,b,1,-1\n", "a,b,1\n"] {
        let err = decode_pairs(format!("{h}{body}").as_bytes(), mem()).unwrap_err();
        assert_eq!(format_error(err).0, Some(1), "{body:?}");
    }
    assert_eq!(format_error(decode_pairs(b"a,b,c,d\n", mem()).unwrap_err()).0, None);
}
