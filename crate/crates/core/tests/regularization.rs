use wavered::config::RunConfig;
use wavered::pipeline::Model;
use wavered::regularization::transport_forward;
use wavered::Error;

fn cfg(eps: f64, family: &str, gamma: f64) -> RunConfig {
    format!(
        "mass = 1\nepsilon = {eps}\nd = 1\nL = 4\nKx = 2\nM = 10\n{family}\nomega = 1.7320508075688772\n\
         gamma = {gamma}\ntau0 = 2\ntau1 = 4\ntau = 8\n"
    )
    .parse()
    .unwrap()
}

const OSC: &str = "family = oscillatory\nc_star = 0.3\nterms = cos:0.6:1:1; cos:0.6:1:-1; sin:0.4:2:0";

#[test]
fn zero_perturbation_gives_zero_generator() {
    let reg = Model::new(cfg(0.0, OSC, 0.05)).unwrap().regularize().unwrap();
    assert_eq!(reg.g.max_abs(), 0.0);
    assert_eq!(reg.p.max_abs(), 0.0);
    let m = reg.h0.m;
    for a in 0..=m {
        let e = reg.h0.eigenvalues(a);
        assert!((e[0] - ((a * a) as f64 + 1.0).sqrt()).abs() < 1e-15);
    }
}

#[test]
fn generator_is_linear_in_eps() {
    let g1 = Model::new(cfg(1e-4, OSC, 0.05)).unwrap().regularize().unwrap();
    let g2 = Model::new(cfg(3e-4, OSC, 0.05)).unwrap().regularize().unwrap();
    let diff = g2.g.minus(&g1.g.scaled(wavered::C64::new(3.0, 0.0))).unwrap().max_abs();
    assert!(diff < 1e-15 * g2.g.max_abs().max(1.0), "{diff:e}");
    // The remainder is quadratic: the diagonal part of P scales like eps^2
    // once the linear part is gone.
    let r = g2.diagnostics.norm_higher_diag / g1.diagnostics.norm_higher_diag;
    assert!((r - 9.0).abs() < 0.1, "higher-order ratio {r}");
}

#[test]
fn constant_family_needs_no_generator() {
    let model = Model::new(cfg(1e-3, "family = constant\nc_star = 0.3", 0.05)).unwrap();
    let reg = model.regularize().unwrap();
    assert!(reg.g.max_abs() < 1e-18);
    assert!(reg.p.diag.max_abs() < 1e-18);
    // The anti-diagonal part is eps K itself.
    let anti = reg.p.anti.minus(&model.sys.k_op).unwrap().max_abs();
    assert!(anti < 1e-18, "{anti:e}");
    // <k>(xi) = eps c* <xi> chi(xi) / (2 sqrt(xi^2 + 1)).
    for (i, k) in reg.k_avg.iter().enumerate() {
        let xi = i as f64 - 10.0;
        let cut = if xi == 0.0 { 0.0 } else { 1.0 };
        let expect = 1e-3 * 0.3 * xi.abs().max(1.0) * cut / (2.0 * (xi * xi + 1.0).sqrt());
        assert!((k - expect).abs() < 1e-14 * expect.abs().max(1e-12), "xi = {xi}: {k:e} vs {expect:e}");
    }
}

#[test]
fn large_gamma_rejects_the_frequency() {
    // |sqrt(3) - 1| = 0.73 sits on the support of the symbol.
    let err = Model::new(cfg(1e-4, OSC, 0.8)).unwrap().regularize().unwrap_err();
    assert!(matches!(err, Error::NonAdmissible(_)), "{err}");
}

#[test]
fn forward_transport_reproduces_the_symbol() {
    let model = Model::new(cfg(1e-3, OSC, 0.05)).unwrap();
    let reg = model.regularize().unwrap();
    let k = model.sys.k_symbol(2);
    let rhs = k.minus_average().minus(&reg.residual).unwrap();
    let err = transport_forward(&reg.g, model.omega()).minus(&rhs).unwrap().max_abs();
    assert!(err < 1e-15, "{err:e}");
    assert!(reg.diagnostics.residual_slope <= -0.8 || reg.diagnostics.residual_slope == f64::NEG_INFINITY);
}
