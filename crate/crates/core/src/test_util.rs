use crate::nn::{ParamStore, Session};
use crate::tensor::Var;

/// Central finite differences of `f` at `x`.
pub fn central_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest elementwise relative error, with an absolute floor on the denominator.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn lcg_values(seed: u64, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    (0..n)
        .map(|_| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            let u = (state >> 11) as f64 / (1u64 << 53) as f64;
            lo + (hi - lo) * u
        })
        .collect()
}

/// Checks every parameter gradient of `loss` against central differences.
pub fn check_param_grads(store: &ParamStore, loss: impl Fn(&mut Session) -> Var, tol: f64) {
    let mut s = Session::new(store);
    let l = loss(&mut s);
    let grads = s.tape.backward(l).unwrap();
    let analytic = s.param_grads(&grads);
    for id in store.ids() {
        let base = store.get(id).data().to_vec();
        let numeric = central_diff(
            |p| {
                let mut probe = store.clone();
                probe.get_mut(id).data_mut().copy_from_slice(p);
                let mut s = Session::new(&probe);
                let l = loss(&mut s);
                s.value(l).item().unwrap()
            },
            &base,
            1e-5,
        );
        let err = max_rel_err(&analytic[id.index()], &numeric, 1e-7);
        assert!(err < tol, "{}: rel err {err}", store.name(id));
    }
}
