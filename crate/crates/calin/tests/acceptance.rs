//! Acceptance gate: one test per shipped guarantee, each printing a single
//! PASS/FAIL line. Run with `cargo test --test acceptance -- --nocapture`
//! to see the lines on success.

use std::collections::BTreeMap;
use std::io::{Read as _, Write as _};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use calin::backend::{extract_label_scores, BackendError, TokenLogprob};
use calin::domain::{CalibrationMatrix, CalibrationMode, ConfidenceVector, MatrixKind};
use calin::engine::{
    apply_calibration, blend, population_matrix, BlendInputs, DEFAULT_PROBE_FLOOR,
};
use calin::metrics::{full_report, BinningConfig};
use calin::simulator::{
    generate, oracle_metrics, run_experiment, ExperimentMode, SyntheticTaskSpec,
};

fn verdict(name: &str, ok: bool) {
    println!("acceptance [{name}]: {}", if ok { "PASS" } else { "FAIL" });
}

fn random_positive_conf(rng: &mut ChaCha8Rng, dim: usize) -> ConfidenceVector {
    // Entries bounded away from the probe floor so inversion never clamps.
    let mass: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = mass.iter().sum();
    ConfidenceVector::new(mass.iter().map(|m| m / total).collect()).unwrap()
}

/// 10^4 randomized trials of the core algebra: the blend stays between its
/// endpoints and keeps the displacement sign, equal inputs are a fixed
/// point, growing alpha moves the blend monotonically toward the subgroup
/// diagonal, and a null probe calibrated by its own inverse lands on the
/// uniform distribution.
#[test]
fn engine_algebra_randomized_properties() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xA11CE);
    let mut ok = true;
    for trial in 0..10_000 {
        let dim = rng.gen_range(2..6);
        let u: Vec<f64> = (0..dim).map(|_| rng.gen_range(1e-3..1e3)).collect();
        let s: Vec<f64> = (0..dim).map(|_| rng.gen_range(1e-3..1e3)).collect();
        let alpha_lo = rng.gen_range(0.0..1e3);
        let alpha_hi = alpha_lo + rng.gen_range(1e-6..1e3);

        let c_lo = blend(&BlendInputs { u: &u, s_a: &s, alpha: alpha_lo }).unwrap();
        let c_hi = blend(&BlendInputs { u: &u, s_a: &s, alpha: alpha_hi }).unwrap();
        for j in 0..dim {
            let (lo, hi) = (u[j].min(s[j]), u[j].max(s[j]));
            // Betweenness and sign preservation.
            ok &= c_lo[j] >= lo - 1e-12 && c_lo[j] <= hi + 1e-12;
            ok &= (c_lo[j] - u[j]) * (s[j] - u[j]) >= 0.0;
            // Shrinkage monotone in alpha: larger alpha ends nearer s.
            ok &= (c_hi[j] - s[j]).abs() <= (c_lo[j] - s[j]).abs() + 1e-12;
        }

        // Fixed point when both levels agree.
        let fixed = blend(&BlendInputs { u: &u, s_a: &u, alpha: alpha_hi }).unwrap();
        ok &= fixed == u;

        // A null defeats itself: inverse-of-null applied to the null is
        // uniform.
        let null = random_positive_conf(&mut rng, dim);
        let matrix = population_matrix(&null, DEFAULT_PROBE_FLOOR).unwrap().matrix;
        let out = apply_calibration(&matrix, &null).unwrap();
        for &p in out.probs() {
            ok &= (p - 1.0 / dim as f64).abs() < 1e-9;
        }

        if !ok {
            eprintln!("property violated at trial {trial}");
            break;
        }
    }
    let within_budget = start.elapsed() < Duration::from_secs(5);
    verdict("engine-algebra-properties", ok && within_budget);
    assert!(ok, "an algebra property failed");
    assert!(within_budget, "property sweep exceeded 5s: {:?}", start.elapsed());
}

/// The blend of u = (2, 2), s = (4, 1) at alpha = 2 matches a fully
/// independent scalar evaluation of the defining expression to 1e-9, and
/// 100 random positive nulls each calibrate themselves to uniform to 1e-12.
#[test]
fn worked_values_and_self_defeat() {
    let c = blend(&BlendInputs { u: &[2.0, 2.0], s_a: &[4.0, 1.0], alpha: 2.0 }).unwrap();
    // Independent evaluation: rate k = 1/sqrt(2 + 1), c_j = u_j + d_j e^{-k|d_j|}.
    let k = 1.0 / (2.0f64 + 1.0).sqrt();
    let expected = [
        2.0 + 2.0 * (-k * 2.0f64).exp(),
        2.0 + (-1.0) * (-k * 1.0f64).exp(),
    ];
    let mut ok = (c[0] - expected[0]).abs() < 1e-9 && (c[1] - expected[1]).abs() < 1e-9;

    let mut rng = ChaCha8Rng::seed_from_u64(0xB10B);
    for _ in 0..100 {
        let dim = rng.gen_range(2..6);
        let null = random_positive_conf(&mut rng, dim);
        let u = population_matrix(&null, DEFAULT_PROBE_FLOOR).unwrap().matrix;
        let out = apply_calibration(&u, &null).unwrap();
        for &p in out.probs() {
            ok &= (p - 1.0 / dim as f64).abs() < 1e-12;
        }
    }
    verdict("worked-values", ok);
    assert!(ok, "blend worked values or null self-defeat drifted");
}

/// The metric suite agrees with the independent brute-force oracle to 1e-12
/// on 50 randomized instances of at most 100 records each.
#[test]
fn metrics_match_oracle() {
    let start = Instant::now();
    let binning = BinningConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0x0AC1E);
    let mut ok = true;
    for case in 0..50 {
        let mut spec = SyntheticTaskSpec::default_biased();
        spec.seed = rng.gen();
        spec.signal_strength = rng.gen_range(0.2..3.0);
        spec.base_bias = vec![rng.gen_range(-1.0..1.0), 0.0];
        spec.subgroup_bias
            .insert("elder".into(), vec![rng.gen_range(-1.0..1.0), 0.0]);
        let n = rng.gen_range(10..=100);
        let data = generate(&spec, n).unwrap();

        let report = full_report(&data.records, &spec.schema, &binning).unwrap();
        let oracle = oracle_metrics(&data.records, &spec.schema, &binning).unwrap();
        ok &= (report.accuracy - oracle.accuracy).abs() < 1e-12;
        ok &= (report.ece - oracle.ece).abs() < 1e-12;
        ok &= (report.esce - oracle.esce).abs() < 1e-12;
        for (k, v) in &oracle.cceg {
            ok &= (report.cceg[k] - v).abs() < 1e-12;
        }
        for (k, v) in &oracle.subgroup_ece {
            ok &= (report.subgroup_ece[k] - v).abs() < 1e-12;
        }
        if let Some(eor) = oracle.mean_eor {
            ok &= (report.mean_eor - eor).abs() < 1e-12;
        }
        if !ok {
            eprintln!("oracle mismatch at case {case} (n = {n})");
            break;
        }
    }
    let within_budget = start.elapsed() < Duration::from_secs(10);
    verdict("metric-oracle-equivalence", ok && within_budget);
    assert!(ok, "metrics drifted from the brute-force oracle");
    assert!(within_budget, "oracle sweep exceeded 10s: {:?}", start.elapsed());
}

fn default_experiment() -> calin::simulator::ExperimentResult {
    run_experiment(
        &SyntheticTaskSpec::default_biased(),
        2000,
        &[ExperimentMode::L1Only, ExperimentMode::L2Only, ExperimentMode::Bilevel],
        &BinningConfig::default(),
    )
    .unwrap()
}

/// On the default biased task (n = 2000, fixed seed), bi-level calibration
/// halves both the overall ECE and the age calibration gap relative to the
/// uncalibrated baseline.
#[test]
fn bilevel_halves_ece_and_age_gap() {
    let start = Instant::now();
    let result = default_experiment();
    let vanilla = &result.outcomes[&ExperimentMode::Vanilla].report;
    let bilevel = &result.outcomes[&ExperimentMode::Bilevel].report;
    let ece_ok = bilevel.ece <= 0.5 * vanilla.ece;
    let age_ok = bilevel.cceg["age"] <= 0.5 * vanilla.cceg["age"];
    let within_budget = start.elapsed() < Duration::from_secs(30);
    verdict("bilevel-vs-vanilla", ece_ok && age_ok && within_budget);
    assert!(
        ece_ok,
        "bilevel ECE {} not half of vanilla {}",
        bilevel.ece, vanilla.ece
    );
    assert!(
        age_ok,
        "bilevel age gap {} not half of vanilla {}",
        bilevel.cceg["age"], vanilla.cceg["age"]
    );
    assert!(within_budget, "experiment exceeded 30s: {:?}", start.elapsed());
}

/// Ablation directionality on the same fixed run: bi-level is at least as
/// well calibrated as the population-only level and at least as equitable
/// across intersectional subgroups as the subgroup-only level.
#[test]
fn bilevel_dominates_single_levels() {
    let start = Instant::now();
    let result = default_experiment();
    let l1 = &result.outcomes[&ExperimentMode::L1Only].report;
    let l2 = &result.outcomes[&ExperimentMode::L2Only].report;
    let bilevel = &result.outcomes[&ExperimentMode::Bilevel].report;
    let ece_ok = bilevel.ece <= l1.ece;
    let inter_ok = bilevel.cceg["intersection"] <= l2.cceg["intersection"];
    let within_budget = start.elapsed() < Duration::from_secs(30);
    verdict("bilevel-vs-single-levels", ece_ok && inter_ok && within_budget);
    assert!(ece_ok, "bilevel ECE {} above L1-only {}", bilevel.ece, l1.ece);
    assert!(
        inter_ok,
        "bilevel intersection gap {} above L2-only {}",
        bilevel.cceg["intersection"], l2.cceg["intersection"]
    );
    assert!(within_budget, "experiment exceeded 30s: {:?}", start.elapsed());
}

/// The shipped record-log fixture renders exactly the frozen table row.
#[test]
fn fixture_renders_frozen_row() {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let output = Command::new(env!("CARGO_BIN_EXE_calin"))
        .arg("--config")
        .arg(fixtures.join("table_row.toml"))
        .arg("evaluate")
        .arg("--records")
        .arg(fixtures.join("table_row.jsonl"))
        .output()
        .expect("binary runs");
    let stdout = String::from_utf8_lossy(&output.stdout);
    let row = stdout
        .lines()
        .find_map(|l| l.strip_prefix("evaluated"))
        .map(str::trim_start)
        .unwrap_or("");
    let ok = output.status.success() && row == "78.57 5.97 34.38 1.53 9.52 6.14";
    verdict("formatting-fixture", ok);
    assert!(
        ok,
        "expected row \"78.57 5.97 34.38 1.53 9.52 6.14\", got {row:?} (status {:?})",
        output.status
    );
}

/// Two simulate runs with the same seed produce byte-identical artifact,
/// record and report files.
#[test]
fn simulate_is_byte_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let dirs = [tmp.path().join("a"), tmp.path().join("b")];
    for dir in &dirs {
        let status = Command::new(env!("CARGO_BIN_EXE_calin"))
            .arg("--seed")
            .arg("11")
            .arg("--out")
            .arg(dir)
            .arg("simulate")
            .status()
            .expect("binary runs");
        assert!(status.success(), "simulate failed in {dir:?}");
    }
    let mut names: Vec<String> = std::fs::read_dir(&dirs[0])
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    let mut ok = !names.is_empty();
    for name in &names {
        let a = std::fs::read(dirs[0].join(name)).unwrap();
        let b = std::fs::read(dirs[1].join(name)).unwrap();
        if a != b {
            eprintln!("{name} differs between identically seeded runs");
            ok = false;
        }
    }
    // Both runs must produce the same file set.
    let mut names_b: Vec<String> = std::fs::read_dir(&dirs[1])
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names_b.sort();
    ok &= names == names_b;
    verdict("simulate-determinism", ok);
    assert!(ok, "simulate output is not reproducible");
}

/// Minimal chat-completions stub: answers every POST with a fixed logprobs
/// payload, closes each connection, and records the JSON bodies it saw.
fn spawn_stub_server(
    responses: usize,
) -> (u16, std::thread::JoinHandle<Vec<serde_json::Value>>) {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    listener.set_nonblocking(true).unwrap();
    let port = listener.local_addr().unwrap().port();
    let handle = std::thread::spawn(move || {
        let mut bodies = Vec::new();
        // Overall deadline so a failing client cannot hang the suite.
        let deadline = Instant::now() + Duration::from_secs(60);
        while bodies.len() < responses {
            let mut stream = match listener.accept() {
                Ok((stream, _)) => stream,
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    if Instant::now() > deadline {
                        break;
                    }
                    std::thread::sleep(Duration::from_millis(10));
                    continue;
                }
                Err(e) => panic!("accept failed: {e}"),
            };
            stream.set_nonblocking(false).unwrap();
            let mut buf = Vec::new();
            let mut chunk = [0u8; 4096];
            let header_end = loop {
                let n = stream.read(&mut chunk).unwrap();
                buf.extend_from_slice(&chunk[..n]);
                if let Some(pos) = buf.windows(4).position(|w| w == b"\r\n\r\n") {
                    break pos + 4;
                }
                assert!(n > 0, "connection closed before headers completed");
            };
            let headers = String::from_utf8_lossy(&buf[..header_end]).to_string();
            let content_length: usize = headers
                .lines()
                .find_map(|l| {
                    let (name, value) = l.split_once(':')?;
                    name.eq_ignore_ascii_case("content-length")
                        .then(|| value.trim().parse().ok())?
                })
                .expect("request carries Content-Length");
            while buf.len() < header_end + content_length {
                let n = stream.read(&mut chunk).unwrap();
                assert!(n > 0, "connection closed before body completed");
                buf.extend_from_slice(&chunk[..n]);
            }
            let body: serde_json::Value =
                serde_json::from_slice(&buf[header_end..header_end + content_length]).unwrap();
            bodies.push(body);

            let payload = serde_json::json!({
                "choices": [{
                    "logprobs": { "content": [{
                        "token": "Negative",
                        "logprob": -0.3,
                        "top_logprobs": [
                            { "token": "Negative", "logprob": -0.3 },
                            { "token": "Positive", "logprob": -1.4 }
                        ]
                    }]}
                }]
            })
            .to_string();
            let response = format!(
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                payload.len()
            );
            stream.write_all(response.as_bytes()).unwrap();
        }
        bodies
    });
    (port, handle)
}

/// Probing against a stub endpoint issues exactly one content-free request
/// plus one per attribute value, every request pinned to temperature 0, a
/// single output token and logprobs; score extraction handles present,
/// missing and empty alternatives.
#[test]
fn wire_contract_against_stub() {
    let tmp = tempfile::tempdir().unwrap();

    // One exemplar with a resolvable image file.
    let image = tmp.path().join("img0.png");
    std::fs::write(&image, b"not-a-real-png").unwrap();
    let manifest = tmp.path().join("few_shot.json");
    std::fs::write(
        &manifest,
        serde_json::json!([{
            "image_ref": image.to_string_lossy(),
            "attributes": { "age": "young" },
            "label": 0
        }])
        .to_string(),
    )
    .unwrap();

    // 1 population probe + |{young, elder}| subgroup probes.
    let (port, server) = spawn_stub_server(3);
    let config_path = tmp.path().join("run.toml");
    std::fs::write(
        &config_path,
        format!(
            r#"
few_shot_manifest = "{manifest}"

[[classes]]
display_name = "negative"
label_token = "Negative"

[[classes]]
display_name = "positive"
label_token = "Positive"

[schema]
prompt_attributes = ["age"]

[[schema.attributes]]
name = "age"
values = ["young", "elder"]

[calibration]
attribute = "age"

[backend]
kind = "http"
endpoint = "http://127.0.0.1:{port}/v1/chat/completions"
model = "stub-model"
credential_env = "CALIN_ACCEPTANCE_KEY"
retries = 0
"#,
            manifest = manifest.to_string_lossy()
        ),
    )
    .unwrap();

    let artifact = tmp.path().join("artifact.json");
    let output = Command::new(env!("CARGO_BIN_EXE_calin"))
        .env("CALIN_ACCEPTANCE_KEY", "test-credential")
        .arg("--config")
        .arg(&config_path)
        .arg("--out")
        .arg(&artifact)
        .arg("probe")
        .output()
        .expect("binary runs");
    let bodies = server.join().expect("stub server finished");

    let mut ok = output.status.success() && artifact.exists() && bodies.len() == 3;
    for body in &bodies {
        ok &= body["temperature"] == 0;
        ok &= body["max_tokens"] == 1;
        ok &= body["logprobs"] == true;
    }
    // The artifact must never leak the credential.
    if let Ok(text) = std::fs::read_to_string(&artifact) {
        ok &= !text.contains("test-credential");
    }

    // Extraction semantics on the three response shapes.
    let tl = |token: &str, logprob: f64| TokenLogprob { token: token.into(), logprob };
    let present =
        extract_label_scores(&[tl("Negative", -0.3), tl("Positive", -1.4)], &["Negative", "Positive"], 1e-6)
            .unwrap();
    ok &= present.matched == 2
        && (present.raw.scores()[0] - (-0.3f64).exp()).abs() < 1e-12
        && (present.raw.scores()[1] - (-1.4f64).exp()).abs() < 1e-12;
    let missing =
        extract_label_scores(&[tl("Negative", -0.3)], &["Negative", "Positive"], 1e-6).unwrap();
    ok &= missing.matched == 1 && missing.raw.scores()[1] == 1e-6;
    ok &= matches!(
        extract_label_scores(&[], &["Negative", "Positive"], 1e-6),
        Err(BackendError::NoLogprobs)
    );

    verdict("wire-contract", ok);
    assert!(
        ok,
        "wire contract violated: status {:?}, {} requests, stderr: {}",
        output.status,
        bodies.len(),
        String::from_utf8_lossy(&output.stderr)
    );
}

/// Guard: the suite above exercises matrices and modes as a consumer; keep
/// a compile-time check that the public surface stays sufficient for it.
#[allow(dead_code)]
fn public_surface_stays_usable(
    diag: Vec<f64>,
) -> Result<(CalibrationMatrix, CalibrationMode, BTreeMap<String, f64>), calin::domain::DomainError>
{
    Ok((
        CalibrationMatrix::new(diag, MatrixKind::Final)?,
        CalibrationMode::Bilevel,
        BTreeMap::new(),
    ))
}
