use std::fs;
use std::path::{Path, PathBuf};

use conparse_core::decoder::beam_parse;
use conparse_core::treebank::{read_ptb, write_ptb};
use conparse_core::{LinearModel, Sentence};

fn run(args: &[&str]) -> i32 {
    conparse::run(std::iter::once("conparse").chain(args.iter().copied()))
}

fn data(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

#[test]
fn extract_students_sentence() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "f.hier");
    assert_eq!(
        run(&["extract-hierarchies", &data("students.mrg"), "-o", &out]),
        0
    );
    let text = fs::read_to_string(&out).unwrap();
    let first = text.lines().next().unwrap();
    assert!(
        first.starts_with("The\t") && first.contains("s:S>NP"),
        "{first}"
    );
    assert_eq!(text, fs::read_to_string(data("students.hier")).unwrap());
}

fn baseline_parser(dir: &Path) -> (String, String) {
    let train = path(dir, "train.mrg");
    let model = path(dir, "parser.model");
    assert_eq!(run(&["synth", "--seed", "5", "-n", "30", "-o", &train]), 0);
    assert_eq!(
        run(&[
            "train-parser",
            "--train",
            &train,
            "--no-lookahead",
            "--epochs",
            "2",
            "-o",
            &model
        ]),
        0
    );
    (train, model)
}

#[test]
fn beam_one_parse_matches_library_greedy() {
    let dir = tempfile::tempdir().unwrap();
    let (train, model) = baseline_parser(dir.path());
    let out = path(dir.path(), "out.mrg");
    assert_eq!(
        run(&["parse", "--model", &model, "--beam", "1", &train, "-o", &out]),
        0
    );
    let m = LinearModel::from_bytes(&fs::read(&model).unwrap())
        .unwrap()
        .averaged();
    let expected: Vec<_> = read_ptb(&fs::read_to_string(&train).unwrap())
        .unwrap()
        .iter()
        .map(|t| {
            beam_parse(&Sentence::from_tree(t), None, &m, 1)
                .unwrap()
                .tree
        })
        .collect();
    assert_eq!(fs::read_to_string(&out).unwrap(), write_ptb(&expected));
}

#[test]
fn tagged_input_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let (train, model) = baseline_parser(dir.path());
    let tagged = path(dir.path(), "in.txt");
    let sentences: Vec<Sentence> = read_ptb(&fs::read_to_string(&train).unwrap())
        .unwrap()
        .iter()
        .map(Sentence::from_tree)
        .collect();
    fs::write(&tagged, conparse_core::sentence::write_tagged(&sentences)).unwrap();
    let a = path(dir.path(), "a.mrg");
    let b = path(dir.path(), "b.mrg");
    assert_eq!(run(&["parse", "--model", &model, &tagged, "-o", &a]), 0);
    assert_eq!(
        run(&[
            "parse",
            "--model",
            &model,
            &train,
            "-o",
            &b,
            "--workers",
            "2"
        ]),
        0
    );
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let tsv = path(dir.path(), "e.tsv");
    assert_eq!(
        run(&["evaluate", "--gold", &train, "--pred", &a, "--tsv", &tsv]),
        0
    );
    assert!(fs::read_to_string(&tsv).unwrap().lines().count() > 1);
    let rep: PathBuf = dir.path().join("report");
    assert_eq!(
        run(&[
            "report",
            "--gold",
            &train,
            "--pred",
            &a,
            "-o",
            rep.to_str().unwrap()
        ]),
        0
    );
    assert!(rep.join("report.txt").exists() && rep.join("brackets.tsv").exists());
}

#[test]
fn predict_writes_provenance_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let model = path(dir.path(), "p.bin");
    let small = [
        "--set",
        "predictor.word_dim=4",
        "--set",
        "predictor.char_dim=3",
        "--set",
        "predictor.char_hidden=4",
        "--set",
        "predictor.hidden=4",
        "--set",
        "predictor.attention_dim=3",
        "--set",
        "predictor.epochs=2",
    ];
    let toy = data("toy5.mrg");
    let mut args = vec!["train-predictor", "--train", &toy, "-o", &model];
    args.extend(small);
    assert_eq!(run(&args), 0);
    let out = path(dir.path(), "toy.hier");
    let stats = path(dir.path(), "stats.tsv");
    assert_eq!(
        run(&["predict", "--model", &model, &toy, "-o", &out, "--stats", &stats]),
        0
    );
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("# provenance predictor "));
    assert_eq!(
        conparse_core::hierarchy::read_hierarchy_file(&text)
            .unwrap()
            .len(),
        5
    );
    let stats = fs::read_to_string(&stats).unwrap();
    assert!(
        stats.contains("depth_cap_hits\t") && stats.contains("s_f1\t") && stats.contains("e_f1\t")
    );
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let bad = path(dir.path(), "bad.mrg");
    fs::write(&bad, "(S (NP x)").unwrap();
    assert_ne!(run(&["extract-hierarchies", &bad]), 0);
    assert_ne!(
        run(&["extract-hierarchies", &path(dir.path(), "missing.mrg")]),
        0
    );
    assert_ne!(run(&["no-such-command"]), 0);
    let (train, _) = baseline_parser(dir.path());
    // lookahead is on by default and needs predictions
    assert_ne!(
        run(&[
            "train-parser",
            "--train",
            &train,
            "-o",
            &path(dir.path(), "m")
        ]),
        0
    );
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let (train, _) = baseline_parser(dir.path());
    let conf = path(dir.path(), "run.conf");
    fs::write(path(dir.path(), "base.conf"), "parser.beam = 0\n").unwrap();
    fs::write(&conf, "include base.conf\nparser.epochs = 1\n").unwrap();
    let model = path(dir.path(), "m");
    let args = [
        "train-parser",
        "--train",
        &train,
        "--no-lookahead",
        "-o",
        &model,
        "--config",
        &conf,
    ];
    assert_ne!(
        run(&args),
        0,
        "beam 0 from the included file must be rejected"
    );
    let mut ok = args.to_vec();
    ok.extend(["--set", "parser.beam=2", "--set", "parser.binary=true"]);
    assert_eq!(run(&ok), 0);
    let bytes = fs::read(&model).unwrap();
    assert!(bytes.starts_with(b"CPPM"));
    LinearModel::from_bytes(&bytes).unwrap();
    assert_ne!(run(&["synth", "--set", "parser.bogus=1"]), 0);
}
