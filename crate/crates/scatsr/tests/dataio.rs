//! File-format round trips: raw tensors, coefficient files, filter banks and
//! checkpoints.

use scatsr::container::{
    read_bank, read_coefficients, write_bank, write_coefficients, Checkpoint, Container, FeatureSpec, Role, MAGIC,
};
use scatsr::error::CliError;
use scatsr::imageio::{load_image, save_image};
use scatsr_core::optim::OptimizerConfig;
use scatsr_core::predictor::{build_baseline_default, PhiArchitecture};
use scatsr_core::rng::{gaussian_tensor, seeded};
use scatsr_core::scattering::{FeatureNetwork, Scattering, ScatteringConfig, Trainable};
use scatsr_core::ImageTensor;

#[test]
fn raw_container_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("r.sfr");
    let mut t = gaussian_tensor(&mut seeded(3), 3, 7, 5, 1.0);
    // Values that a decimal or 8-bit path would mangle.
    t.as_mut_slice()[0] = f64::MIN_POSITIVE;
    t.as_mut_slice()[1] = -0.0;
    t.as_mut_slice()[2] = 1.0 / 3.0;
    save_image(&t, &p).unwrap();
    let back = load_image(&p).unwrap();
    assert_eq!(back.shape(), t.shape());
    for (a, b) in back.as_slice().iter().zip(t.as_slice()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn corrupt_containers_are_format_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("r.sfr");
    save_image(&ImageTensor::filled(1, 2, 2, 0.5), &p).unwrap();
    let bytes = std::fs::read(&p).unwrap();
    assert_eq!(&bytes[..8], MAGIC);

    let cases: Vec<Vec<u8>> = vec![
        bytes[..bytes.len() - 3].to_vec(),
        [bytes.as_slice(), &[0u8]].concat(),
        [b"NOTMAGIC".as_slice(), &bytes[8..]].concat(),
        Vec::new(),
    ];
    for (i, case) in cases.iter().enumerate() {
        let q = dir.path().join(format!("bad{i}.sfr"));
        std::fs::write(&q, case).unwrap();
        assert!(matches!(load_image(&q), Err(CliError::Format { .. })), "case {i}");
    }
    assert!(matches!(load_image(&dir.path().join("absent.sfr")), Err(CliError::Io { .. })));
}

#[test]
fn schema_version_is_checked() {
    let c = Container::new("tensor", serde_json::json!({"shape": [1, 1, 1]}))
        .unwrap()
        .with_array("data", vec![1.0]);
    let mut bytes = c.to_bytes();
    assert_eq!(Container::from_bytes(&bytes, "x".as_ref()).unwrap(), c);
    let text = c.header.to_string();
    let pos = bytes.windows(text.len()).position(|w| w == text.as_bytes()).unwrap();
    let bumped = text.replace("\"schema_version\":1", "\"schema_version\":9");
    assert_eq!(bumped.len(), text.len());
    bytes[pos..pos + text.len()].copy_from_slice(bumped.as_bytes());
    assert!(Container::from_bytes(&bytes, "x".as_ref()).is_err());
}

#[test]
fn coefficients_and_bank_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ScatteringConfig::default();
    let psi = Scattering::new(cfg, 32, 32).unwrap();
    let img = gaussian_tensor(&mut seeded(1), 1, 32, 32, 1.0);
    let coeffs = psi.forward(&img).unwrap();
    let spec = FeatureSpec::new(cfg, (32, 32));

    let p = dir.path().join("c.bin");
    write_coefficients(&p, &coeffs, &spec).unwrap();
    let (back, back_spec) = read_coefficients(&p).unwrap();
    assert_eq!(back, coeffs);
    assert_eq!(back_spec, spec);

    let p = dir.path().join("b.bin");
    write_bank(&p, psi.bank(), &spec).unwrap();
    let (bank, _) = read_bank(&p).unwrap();
    assert_eq!(&bank, psi.bank());
    assert!(read_coefficients(&p).is_err(), "kind mismatch must be rejected");
}

fn phi_params_len(arch: &PhiArchitecture, cfg: &ScatteringConfig) -> usize {
    arch.build(cfg.channel_count(), 0).unwrap().num_params()
}

#[test]
fn checkpoints_roundtrip_with_and_without_psi() {
    let dir = tempfile::tempdir().unwrap();
    let base = Checkpoint {
        role: Role::Baseline,
        network: build_baseline_default(4).unwrap(),
        features: None,
        degradation_factor: 2,
        psi_params: None,
        optimizer: None,
    };
    let p = dir.path().join("base.ck");
    base.write(&p).unwrap();
    let back = Checkpoint::read(&p).unwrap();
    assert_eq!(back.network, base.network);
    assert_eq!(back.role, Role::Baseline);
    assert!(back.psi_for((16, 16)).unwrap().is_none());

    let arch = PhiArchitecture {
        hidden_widths: vec![3],
        kernels: vec![3, 1],
        strides: vec![2, 2],
    };
    let scfg = ScatteringConfig {
        oversampling: 1,
        ..ScatteringConfig::default()
    };
    let mut psi = Scattering::new(scfg, 16, 16).unwrap();
    let mut params = psi.params();
    params.iter_mut().enumerate().for_each(|(i, v)| *v *= 1.0 + 1e-3 * (i % 7) as f64);
    psi.set_params(&params).unwrap();
    let mut adam = OptimizerConfig::adam(1e-3).build(phi_params_len(&arch, &scfg)).unwrap();
    let mut dummy = vec![0.0; phi_params_len(&arch, &scfg)];
    let g: Vec<f64> = (0..dummy.len()).map(|i| (i as f64).sin()).collect();
    adam.step(&mut dummy, &g).unwrap();
    let phi = Checkpoint {
        role: Role::Phi,
        network: arch.build(scfg.channel_count(), 0).unwrap(),
        features: Some(FeatureSpec::new(scfg, (16, 16))),
        degradation_factor: 2,
        psi_params: Some(params.clone()),
        optimizer: Some(adam),
    };
    let p = dir.path().join("phi.ck");
    phi.write(&p).unwrap();
    let back = Checkpoint::read(&p).unwrap();
    assert_eq!(back.psi_params.as_deref(), Some(params.as_slice()));
    assert_eq!(back.optimizer, phi.optimizer);
    let restored = back.psi_for((16, 16)).unwrap().unwrap();
    let x = gaussian_tensor(&mut seeded(2), 1, 16, 16, 1.0);
    assert_eq!(restored.features(&x).unwrap(), psi.features(&x).unwrap());
    // Fine-tuned filters are tied to their grid.
    assert!(matches!(back.psi_for((32, 32)), Err(CliError::Config(_))));
}
