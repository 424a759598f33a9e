use super::LyapunovCandidate;
use crate::compfn::TimeGain;
use crate::dsl::{Expr, Func, Var};
use crate::error::{Error, Result};
use crate::system::SystemDef;

fn exp_of(e: Expr) -> Expr {
    Expr::call(Func::Exp, vec![e])
}

fn t_plus_one() -> Expr {
    Expr::add(Expr::Var(Var::T), Expr::Num(1.0))
}

/// The rescaled system on `(z, w)` with
///
/// ```text
/// z⁺ = e^{-t-1} / μ(t+1) · f(t, d, e^t μ(t) z)
/// w⁺ = e^{-1} w - e^{-1} H(t, e^t μ(t) z) + H(t+1, f(t, d, e^t μ(t) z))
/// ```
///
/// Both outputs are the full state `(z, w)`, so their Euclidean norm is the
/// norm of the product space.
pub fn build_transformed_system(sys: &SystemDef, mu: &TimeGain) -> Result<SystemDef> {
    if sys.k != 0 {
        return Err(Error::invalid(
            "the transformed system is defined for unforced systems",
        ));
    }
    for t in 0..=200u64 {
        let m = mu.eval(t as f64)?;
        if !(m > 0.0) {
            return Err(Error::invalid(format!("mu({t}) = {m} is not positive")));
        }
    }
    let n = sys.n;
    let p = sys.p_stab();
    let scale = Expr::mul(exp_of(Expr::Var(Var::T)), mu.to_expr());
    let x_of_z: Vec<Expr> = (0..n)
        .map(|i| Expr::mul(scale.clone(), Expr::Var(Var::X(i))))
        .collect();
    let in_x = |e: &Expr| {
        e.substitute(&|v| match v {
            Var::X(i) => Some(x_of_z[*i].clone()),
            _ => None,
        })
    };
    let f_of_z: Vec<Expr> = sys.f.iter().map(in_x).collect();
    let shrink = Expr::div(
        exp_of(Expr::Neg(Box::new(t_plus_one()))),
        mu.expr_at(&t_plus_one()),
    );
    let mut f: Vec<Expr> = f_of_z
        .iter()
        .map(|fi| Expr::mul(shrink.clone(), fi.clone()))
        .collect();
    let e_inv = exp_of(Expr::Num(-1.0));
    for (j, hj) in sys.stabilized.iter().enumerate() {
        let h_now = in_x(hj);
        let h_next = hj.substitute(&|v| match v {
            Var::T => Some(t_plus_one()),
            Var::X(i) => Some(f_of_z[*i].clone()),
            _ => None,
        });
        f.push(Expr::add(
            Expr::sub(
                Expr::mul(e_inv.clone(), Expr::Var(Var::X(n + j))),
                Expr::mul(e_inv.clone(), h_now),
            ),
            h_next,
        ));
    }
    let out: Vec<Expr> = (0..n + p).map(|i| Expr::Var(Var::X(i))).collect();
    SystemDef::new(
        format!("{} (transformed)", sys.name),
        n + p,
        sys.m,
        0,
        sys.d_box.clone(),
        f,
        out.clone(),
        out,
    )
}

/// `V(t, x) = U(t, e^{-t} / μ(t) · x, H(t, x))` for `U` written over the
/// transformed state `(x1..xn, x{n+1}..x{n+p})`.
pub fn compose_v_from_u(u: &Expr, mu: &TimeGain, sys: &SystemDef) -> Result<LyapunovCandidate> {
    let n = sys.n;
    let p = sys.p_stab();
    crate::dsl::Dims::state(n + p).check(u)?;
    let shrink = Expr::div(exp_of(Expr::Neg(Box::new(Expr::Var(Var::T)))), mu.to_expr());
    let v = u.substitute(&|var| match var {
        Var::X(i) if *i < n => Some(Expr::mul(shrink.clone(), Expr::Var(Var::X(*i)))),
        Var::X(i) => Some(sys.stabilized[*i - n].clone()),
        _ => None,
    });
    LyapunovCandidate::new(v, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{parse_expression, Dims, Env};
    use crate::system::{simulate, DisturbancePolicy, InputPolicy};

    fn sqrt_coupled() -> SystemDef {
        SystemDef::parse(
            "sqrt_coupled",
            2,
            1,
            0,
            vec![(-2.0, 2.0)],
            &["d1*x1", "2^(-t)*d1*abs(x1)^0.5"],
            &["x2"],
            &["x2"],
        )
        .unwrap()
    }

    #[test]
    fn origin_is_fixed() {
        let tr = build_transformed_system(&sqrt_coupled(), &TimeGain::one()).unwrap();
        assert_eq!(tr.n, 3);
        for t in 0..5 {
            assert_eq!(tr.step(t, &[0.0; 3], &[1.5], &[]).unwrap(), vec![0.0; 3]);
        }
    }

    #[test]
    fn state_rescaling_matches_original() {
        let sys = sqrt_coupled();
        let mu = TimeGain::parse("1+t").unwrap();
        let tr = build_transformed_system(&sys, &mu).unwrap();
        let x0 = [0.8, -0.3];
        let t0 = 2u64;
        let s0 = (t0 as f64).exp() * mu.eval(t0 as f64).unwrap();
        let z0 = [x0[0] / s0, x0[1] / s0, 0.4];
        let dpol = DisturbancePolicy::RandomUniform { seed: 3 };
        let a = simulate(&sys, t0, &x0, &dpol, &InputPolicy::Zero, 20).unwrap();
        let b = simulate(&tr, t0, &z0, &dpol, &InputPolicy::Zero, 20).unwrap();
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            let s = (ra.t as f64).exp() * mu.eval(ra.t as f64).unwrap();
            for i in 0..2 {
                let back = s * rb.x[i];
                assert!((back - ra.x[i]).abs() <= 1e-9 * (1.0 + ra.x[i].abs()));
            }
        }
    }

    #[test]
    fn composed_v_at_sample_points() {
        let sys = sqrt_coupled();
        let u = parse_expression("(x1^2+x2^2+x3^2)^0.5", &Dims::state(3)).unwrap();
        let cand = compose_v_from_u(&u, &TimeGain::one(), &sys).unwrap();
        assert_eq!(cand.value(0, &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cand.value(7, &[0.0, 0.0]).unwrap(), 0.0);
        let v = cand.v.eval(&Env::state(1.0, &[2.0, 3.0])).unwrap();
        let z = [2.0 / 1f64.exp(), 3.0 / 1f64.exp(), 3.0];
        assert!((v - (z[0] * z[0] + z[1] * z[1] + z[2] * z[2]).sqrt()).abs() < 1e-15);
    }
}
