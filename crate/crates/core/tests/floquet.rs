//! For one frequency the system is periodic, so the monodromy over a period
//! must equal `A(0) exp(-i H_inf T) A(0)^{-1}`.

use nalgebra::DVector;
use wavered::config::RunConfig;
use wavered::kam::{compose_transforms, KamStatus};
use wavered::linalg::{expm, max_abs, CMat, I};
use wavered::pipeline::Model;
use wavered::simulate::{integrate, IntegrateOptions, QPField, Scheme};
use wavered::C64;

const CFG: &str = "
mass = 1
epsilon = 1e-3
d = 1
L = 6
Kx = 2
M = 8
family = oscillatory
c_star = 0.3
terms = cos:0.6:1:1; cos:0.6:1:-1; sin:0.4:2:0
omega = 1.7320508075688772
gamma = 0.05
tau0 = 2
tau1 = 4
tau = 8
N0 = 3
";

#[test]
fn monodromy_matches_reduced_flow() {
    let model = Model::new(CFG.parse::<RunConfig>().unwrap()).unwrap();
    let reg = model.regularize().unwrap();
    let kam = model.kam(&reg).unwrap();
    assert_eq!(kam.status, KamStatus::Converged);
    let omega = model.omega()[0];
    let period = 2.0 * std::f64::consts::PI / omega;
    let t = &model.cfg.wave.trunc;

    let (a0, a0_inv) = compose_transforms(&kam.state.transforms, Some(&reg.g_pair), &[0.0]).unwrap();
    let h_inf = QPField::from_pair(&kam.state.h.to_pair(t.d, t.l_max), &[omega]).eval(0.0);
    let predicted = &a0 * expm(&(&h_inf * (-I * period))) * &a0_inv;

    let field = model.field();
    let n = field.dim();
    let steps = 4000;
    let mut o = IntegrateOptions::new(period, period / steps as f64, Scheme::Krein);
    o.record_every = usize::MAX;
    let mut direct = CMat::zeros(n, n);
    for c in 0..n {
        let mut e = DVector::zeros(n);
        e[c] = C64::new(1.0, 0.0);
        direct.set_column(c, integrate(&field, &e, &o).unwrap().last());
    }
    let err = max_abs(&(&direct - &predicted));
    // Time-stepping error dominates; it is O(dt^2) in the eps-dependent part.
    assert!(err < 1e-7, "monodromy mismatch {err:.3e}");

    // Without the conjugation the two disagree at the size of the perturbation.
    let naive = max_abs(&(&direct - expm(&(&h_inf * (-I * period)))));
    eprintln!("monodromy error {err:.3e}, unconjugated {naive:.3e}");
    assert!(naive > 1e-5, "{naive:.3e}");
}

#[test]
fn quasi_energies_match_the_reduced_spectrum() {
    let model = Model::new(CFG.parse::<RunConfig>().unwrap()).unwrap();
    let reg = model.regularize().unwrap();
    let kam = model.kam(&reg).unwrap();
    let omega = model.omega()[0];
    let t = &model.cfg.wave.trunc;
    let h_inf = QPField::from_pair(&kam.state.h.to_pair(t.d, t.l_max), &[omega]).eval(0.0);
    let n = h_inf.nrows() / 2;
    let upper = h_inf.view((0, 0), (n, n)).into_owned();
    let eig = upper.clone().symmetric_eigen();

    let (t_end, dt, every) = (50.0, 0.01, 10);
    let mut o = IntegrateOptions::new(t_end, dt, Scheme::Krein);
    o.record_every = every;
    let field = model.field();
    let a_inv = |s: f64| compose_transforms(&kam.state.transforms, Some(&reg.g_pair), &[omega * s]).unwrap().1;
    let (a0, _) = compose_transforms(&kam.state.transforms, Some(&reg.g_pair), &[0.0]).unwrap();
    let inv: Vec<CMat> = (0..=(t_end / dt) as usize / every).map(|k| a_inv(k as f64 * dt * every as f64)).collect();
    let tol_v = 10.0 * kam.state.p.triple_norm(0.0, 1.0, 0.0) * t_end;

    let mut worst: f64 = 0.0;
    for k in 0..n {
        let e = eig.eigenvectors.column(k).into_owned();
        // Pair state (e, J conj e).
        let v0 = DVector::from_fn(2 * n, |i, _| if i < n { e[i] } else { e[2 * n - 1 - i].conj() });
        let traj = integrate(&field, &(&a0 * &v0), &o).unwrap();
        let mut phase: Vec<f64> = Vec::with_capacity(traj.times.len());
        for (q, ai) in traj.states.iter().zip(&inv) {
            let v = ai * q;
            let z = e.dotc(&v.rows(0, n));
            let mut p = z.arg();
            if let Some(&prev) = phase.last() {
                p += 2.0 * std::f64::consts::PI * ((prev - p) / (2.0 * std::f64::consts::PI)).round();
            }
            phase.push(p);
        }
        // Least-squares slope of the unwrapped phase.
        let m = traj.times.len() as f64;
        let (st, sp) = (traj.times.iter().sum::<f64>() / m, phase.iter().sum::<f64>() / m);
        let cov: f64 = traj.times.iter().zip(&phase).map(|(a, b)| (a - st) * (b - sp)).sum();
        let var: f64 = traj.times.iter().map(|a| (a - st).powi(2)).sum();
        let lambda = -cov / var;
        let err = (lambda - eig.eigenvalues[k]).abs();
        assert!(err < 2.0 * std::f64::consts::PI / t_end + tol_v, "mode {k}: {lambda} vs {}", eig.eigenvalues[k]);
        worst = worst.max(err);
    }
    eprintln!("worst quasi-energy error {worst:.3e}");
    // Far inside the frequency resolution; what is left is time-stepping error.
    assert!(worst < 1e-7, "{worst:.3e}");
}
