// temporary exploration harness (will be replaced by the real suites)
use sa::analyses::*;
use sa::model::corpus::corpus;

#[test]
fn table1_pipeline_smoke() {
    let opts = GeomOptions::default();
    for e in corpus().iter().filter(|e| e.table1) {
        let m = &e.model;
        let aff = m.to_affine(&m.input_symbols()).unwrap();
        let t0 = std::time::Instant::now();
        let eq = find_equilibrium(&aff);
        let t1 = t0.elapsed();
        let acc = analyze_accessibility(&aff, &eq, &opts).unwrap();
        let t2 = t0.elapsed();
        let ctrl = analyze_stlc(&aff, &eq, &acc, &opts).unwrap();
        let t3 = t0.elapsed();
        let eq_kind = match &eq.status {
            EquilibriumStatus::Parametric(b) => format!("param({} bound)", b.len()),
            EquilibriumStatus::Numeric(_) => "numeric".into(),
            EquilibriumStatus::NotFound => "not_found".into(),
        };
        println!(
            "{:24} eq={:16} access={}({}/{}) ctrl={:?}/{:?} w={:?}  [{:?} {:?} {:?}]",
            e.name,
            eq_kind,
            acc.accessible,
            acc.distribution_dim,
            acc.n_states,
            ctrl.verdict,
            ctrl.method,
            ctrl.weight_used,
            t1,
            t2,
            t3
        );
    }
}

#[test]
fn dicho_zero_input_isolated() {
    let src = "model m\nstates HK, RR, SR\nparams beta_HK, beta_RR, beta_SR, delta, k_t, k_tc, k_p, k_pc\n\
ode HK' = beta_HK - delta*HK + k_t*(beta_HK/delta - HK)*RR + k_tc*(beta_HK/delta - HK)*SR\n\
ode RR' = beta_RR - delta*RR - k_t*(beta_HK/delta - HK)*RR + k_p*HK*(beta_RR/delta - RR)\n\
ode SR' = beta_SR - delta*SR - k_tc*(beta_HK/delta - HK)*SR + k_pc*HK*(beta_SR/delta - SR)\n\
output HK\n";
    let m = sa::model::parse_model(src).unwrap();
    let aff = m.to_affine(&m.input_symbols()).unwrap();
    let t0 = std::time::Instant::now();
    let eq = find_equilibrium(&aff);
    println!("isolated: {:?}  [{:?}]", eq.status, t0.elapsed());
}

#[test]
fn sio_corpus_matrix() {
    let opts = SioOptions::default();
    for e in corpus() {
        for v in &e.variants {
            if v.budget_heavy {
                continue;
            }
            let m = e.variant_model(v).unwrap();
            let t0 = std::time::Instant::now();
            match analyze_sio(&m, &v.slug, &opts) {
                Ok(r) => {
                    let set = |xs: &[(String, bool)], want: bool| {
                        xs.iter()
                            .filter(|(_, ok)| *ok == want)
                            .map(|(n, _)| n.as_str())
                            .collect::<Vec<_>>()
                            .join(",")
                    };
                    println!(
                        "{:24} {:10} rank={}/{} id=[{}] nid=[{}] obs=[{}] nobs=[{}]  [{:?}]",
                        e.name,
                        v.slug,
                        r.rank,
                        r.n_augmented,
                        set(&r.params, true),
                        set(&r.params, false),
                        set(&r.states, true),
                        set(&r.states, false),
                        t0.elapsed()
                    );
                }
                Err(err) => println!("{:24} {:10} ERROR {err}  [{:?}]", e.name, v.slug, t0.elapsed()),
            }
        }
    }
}

#[test]
fn mm_complex_z1_sio() {
    let opts = SioOptions::default();
    let cs = corpus();
    let e = cs.iter().find(|e| e.name == "biosd_2mm_complex").unwrap();
    let v = e.variant("y=Z1").unwrap();
    let m = e.variant_model(v).unwrap();
    let t0 = std::time::Instant::now();
    match analyze_sio(&m, &v.slug, &opts) {
        Ok(r) => println!("ok rank={}/{} nodes={} orders={} [{:?}]", r.rank, r.n_augmented, r.nodes_used, r.orders_built, t0.elapsed()),
        Err(err) => println!("ERROR {err} [{:?}]", t0.elapsed()),
    }
}

#[test]
fn tower_sizes() {
    use sa::geom::*;
    use sa::symexpr::*;
    use std::collections::HashSet;
    for (name, slug) in [
        ("srna_autorepressor_g", "y=t"),
        ("srna_autorepressor_g", "y=T"),
    ] {
        let cs = sa::model::corpus::corpus();
        let e = cs.iter().find(|e| e.name == name).unwrap();
        let v = e.variant(slug).unwrap();
        let m = e.variant_model(v).unwrap().augment_with_params();
        let mut cache = DiffCache::new();
        let mut seen: HashSet<usize> = HashSet::new();
        let mut nodes: u64 = 0;
        let mut lies = m.outputs.clone();
        let t0 = std::time::Instant::now();
        for order in 0..m.states.len() {
            for h in &lies {
                nodes += h.dag_size_into(&mut seen);
            }
            println!("{name} {slug} order={order} cum_tower_nodes={nodes} [{:?}]", t0.elapsed());
            if nodes > 20_000_000 || t0.elapsed().as_secs() > 120 { break; }
            let stepped: Result<Vec<Expr>, _> =
                lies.iter().map(|h| lie_step(&m, h, order + 1, &mut cache)).collect();
            lies = stepped.unwrap();
        }
    }
}

#[test]
fn srna_single_output_budget() {
    let opts = SioOptions::default();
    let cs = corpus();
    let e = cs.iter().find(|e| e.name == "srna_autorepressor_g").unwrap();
    for slug in ["y=t", "y=s", "y=c", "y=T"] {
        let v = e.variant(slug).unwrap();
        let m = e.variant_model(v).unwrap();
        let t0 = std::time::Instant::now();
        match analyze_sio(&m, &v.slug, &opts) {
            Ok(r) => println!("{slug} UNEXPECTED ok rank={}/{} [{:?}]", r.rank, r.n_augmented, t0.elapsed()),
            Err(err) => println!("{slug} err: {err} [{:?}]", t0.elapsed()),
        }
    }
}

#[test]
fn targeted_sio() {
    let opts = SioOptions::default();
    let cs = corpus();
    for (name, slug) in [
        ("biosd_2mm_complex", "y=X"),
        ("biosd_2mm_complex", "y=Z1"),
        ("dichotomous_i", "y=HK"),
        ("closed_loop_u", "y=r"),
        ("closed_loop_u", "y=R"),
    ] {
        let e = cs.iter().find(|e| e.name == name).unwrap();
        let v = e.variant(slug).unwrap();
        let m = e.variant_model(v).unwrap();
        let t0 = std::time::Instant::now();
        match analyze_sio(&m, &v.slug, &opts) {
            Ok(r) => println!("{name} {slug} ok rank={}/{} nodes={} [{:?}]", r.rank, r.n_augmented, r.nodes_used, t0.elapsed()),
            Err(err) => println!("{name} {slug} ERROR {err} [{:?}]", t0.elapsed()),
        }
    }
}

#[test]
fn constant_input_experiment() {
    use sa::model::DerivativeClass;
    let opts = SioOptions::default();
    let cs = corpus();
    for (name, slug) in [
        ("dichotomous_i", "y=HK"),
        ("closed_loop_u", "y=r"),
        ("closed_loop_u", "y=R"),
        ("srna_autorepressor_g", "y=t"),
    ] {
        let e = cs.iter().find(|e| e.name == name).unwrap();
        let v = e.variant(slug).unwrap();
        let mut m = e.variant_model(v).unwrap();
        for i in &mut m.inputs {
            i.derivative_class = DerivativeClass::ZeroAbove(1);
        }
        let t0 = std::time::Instant::now();
        match analyze_sio(&m, &v.slug, &opts) {
            Ok(r) => {
                let set = |xs: &[(String, bool)], want: bool| {
                    xs.iter()
                        .filter(|(_, ok)| *ok == want)
                        .map(|(n, _)| n.as_str())
                        .collect::<Vec<_>>()
                        .join(",")
                };
                println!(
                    "{name} {slug} ok rank={}/{} nodes={} orders={} id=[{}] nid=[{}] obs=[{}] nobs=[{}] [{:?}]",
                    r.rank,
                    r.n_augmented,
                    r.nodes_used,
                    r.orders_built,
                    set(&r.params, true),
                    set(&r.params, false),
                    set(&r.states, true),
                    set(&r.states, false),
                    t0.elapsed()
                );
            }
            Err(err) => println!("{name} {slug} ERROR {err} [{:?}]", t0.elapsed()),
        }
    }
}

#[test]
fn big_budget_probe() {
    let mut opts = SioOptions::default();
    opts.budget = std::env::var("SA_BUDGET")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(100_000_000);
    let which: Vec<(String, String)> = std::env::var("SA_ROWS")
        .unwrap_or_default()
        .split(';')
        .filter(|s| !s.is_empty())
        .map(|s| {
            let (a, b) = s.split_once(':').unwrap();
            (a.to_string(), b.to_string())
        })
        .collect();
    let cs = corpus();
    for (name, slug) in &which {
        let e = cs.iter().find(|e| e.name == *name).unwrap();
        let v = e.variant(slug).unwrap();
        let m = e.variant_model(v).unwrap();
        let t0 = std::time::Instant::now();
        match analyze_sio(&m, &v.slug, &opts) {
            Ok(r) => println!(
                "{name} {slug} ok rank={}/{} nodes={} orders={} [{:?}]",
                r.rank,
                r.n_augmented,
                r.nodes_used,
                r.orders_built,
                t0.elapsed()
            ),
            Err(err) => println!("{name} {slug} ERROR {err} [{:?}]", t0.elapsed()),
        }
    }
}

#[test]
fn sparse_poly_prototype() {
    use std::collections::HashMap;
    // vars: 0 HK, 1 RR, 2 SR, 3 beta_HK, 4 beta_RR, 5 beta_SR, 6 delta,
    // 7 k_t, 8 k_tc, 9 k_p, 10 k_pc, 11 k_apmax, 12 K_da, 13.. u0,u1,...
    const NV: usize = 13 + 14;
    type Poly = HashMap<Vec<u8>, i128>;
    fn mono(pairs: &[(usize, u8)], c: i128) -> Poly {
        let mut k = vec![0u8; NV];
        for &(v, e) in pairs {
            k[v] += e;
        }
        HashMap::from([(k, c)])
    }
    fn addp(a: &mut Poly, b: &Poly, scale: i128) {
        for (k, c) in b {
            let e = a.entry(k.clone()).or_insert(0);
            *e = e.checked_add(c.checked_mul(scale).unwrap()).unwrap();
            if *e == 0 {
                a.remove(k);
            }
        }
    }
    fn mulp(a: &Poly, b: &Poly) -> Poly {
        let mut r = Poly::with_capacity(a.len().max(b.len()));
        for (ka, ca) in a {
            for (kb, cb) in b {
                let k: Vec<u8> = ka.iter().zip(kb).map(|(x, y)| x + y).collect();
                let e = r.entry(k.clone()).or_insert(0);
                *e = e.checked_add(ca.checked_mul(*cb).unwrap()).unwrap();
                if *e == 0 {
                    r.remove(&k);
                }
            }
        }
        r
    }
    fn diffp(a: &Poly, v: usize) -> Poly {
        let mut r = Poly::new();
        for (k, c) in a {
            if k[v] > 0 {
                let mut k2 = k.clone();
                k2[v] -= 1;
                *r.entry(k2).or_insert(0) += c * k[v] as i128;
            }
        }
        r.retain(|_, c| *c != 0);
        r
    }
    let (hk, rr, sr) = (0usize, 1usize, 2usize);
    let (b_hk, b_rr, b_sr, delta) = (3usize, 4, 5, 6);
    let (k_t, k_tc, k_p, k_pc, k_ap, k_da) = (7usize, 8, 9, 10, 11, 12);
    let u = |j: usize| 13 + j;
    // D = I + K_da
    let dpoly = {
        let mut d = mono(&[(u(0), 1)], 1);
        addp(&mut d, &mono(&[(k_da, 1)], 1), 1);
        d
    };
    // A = beta_HK - delta*HK, B = beta_RR - delta*RR, C = beta_SR - delta*SR
    let lin = |b: usize, x: usize| {
        let mut p = mono(&[(b, 1)], 1);
        addp(&mut p, &mono(&[(delta, 1), (x, 1)], 1), -1);
        p
    };
    let (pa, pb, pc) = (lin(b_hk, hk), lin(b_rr, rr), lin(b_sr, sr));
    // N_HK = A*delta*D - k_apmax*I*HK*delta + (k_t*RR + k_tc*SR)*A*D   (den delta*D)
    let n_hk = {
        let mut n = mulp(&mulp(&pa, &mono(&[(delta, 1)], 1)), &dpoly);
        addp(&mut n, &mono(&[(k_ap, 1), (u(0), 1), (hk, 1), (delta, 1)], 1), -1);
        let mut mix = mono(&[(k_t, 1), (rr, 1)], 1);
        addp(&mut mix, &mono(&[(k_tc, 1), (sr, 1)], 1), 1);
        addp(&mut n, &mulp(&mulp(&mix, &pa), &dpoly), 1);
        n
    };
    // N_RR = B*delta - k_t*RR*A + k_p*HK*B   (den delta)
    let n_rr = {
        let mut n = mulp(&pb, &mono(&[(delta, 1)], 1));
        addp(&mut n, &mulp(&mono(&[(k_t, 1), (rr, 1)], 1), &pa), -1);
        addp(&mut n, &mulp(&mono(&[(k_p, 1), (hk, 1)], 1), &pb), 1);
        n
    };
    let n_sr = {
        let mut n = mulp(&pc, &mono(&[(delta, 1)], 1));
        addp(&mut n, &mulp(&mono(&[(k_tc, 1), (sr, 1)], 1), &pa), -1);
        addp(&mut n, &mulp(&mono(&[(k_pc, 1), (hk, 1)], 1), &pc), 1);
        n
    };
    // L^k = P_k / (delta^k * D^k), P_0 = HK
    let mut p = mono(&[(hk, 1)], 1);
    let t0 = std::time::Instant::now();
    let mut cum: u64 = 0;
    for order in 0..=12u32 {
        cum += p.len() as u64;
        println!(
            "order={order} monomials={} cum={cum} [{:?}]",
            p.len(),
            t0.elapsed()
        );
        if order == 12 || t0.elapsed().as_secs() > 300 {
            break;
        }
        let b_exp = order as i128; // D exponent in current denominator
        let mut next = mulp(&diffp(&p, hk), &n_hk);
        let mut rs = mulp(&diffp(&p, rr), &n_rr);
        addp(&mut rs, &mulp(&diffp(&p, sr), &n_sr), 1);
        addp(&mut next, &mulp(&rs, &dpoly), 1);
        // input direction I = u0: (dP/dI * D - b*P) * u1 * delta
        let mut iterm = mulp(&diffp(&p, u(0)), &dpoly);
        addp(&mut iterm, &p, -b_exp);
        addp(
            &mut next,
            &mulp(&iterm, &mono(&[(u(1), 1), (delta, 1)], 1)),
            1,
        );
        // higher input derivatives
        for j in 1..=order as usize {
            let dj = diffp(&p, u(j));
            if dj.is_empty() {
                continue;
            }
            addp(
                &mut next,
                &mulp(&mulp(&dj, &mono(&[(u(j + 1), 1), (delta, 1)], 1)), &dpoly),
                1,
            );
        }
        p = next;
    }
}

#[test]
fn tower_policy_trace() {
    use sa::geom::*;
    use sa::symexpr::*;
    use std::collections::HashSet;
    for (name, slug) in [("dichotomous_i", "y=HK"), ("closed_loop_u", "y=r")] {
        let cs = sa::model::corpus::corpus();
        let e = cs.iter().find(|e| e.name == name).unwrap();
        let v = e.variant(slug).unwrap();
        let m = e.variant_model(v).unwrap().augment_with_params();
        let mut cache = DiffCache::new();
        let mut lies = m.outputs.clone();
        let t0 = std::time::Instant::now();
        for order in 1..=12 {
            let stepped: Result<Vec<Expr>, _> =
                lies.iter().map(|h| lie_step(&m, h, order, &mut cache)).collect();
            let hs = stepped.unwrap();
            lies = hs.into_iter().map(|h| {
                let est = term_count_estimate(&h);
                let raw = h.dag_size_into(&mut HashSet::new());
                if est > 250_000 {
                    println!("{name} order={order} raw={raw} est={est} SKIP [{:?}]", t0.elapsed());
                    return h;
                }
                let ex = expand(&h);
                let exs = ex.dag_size_into(&mut HashSet::new());
                println!("{name} order={order} raw={raw} est={est} expanded={exs} keep={} [{:?}]",
                    if exs < raw { "EXP" } else { "RAW" }, t0.elapsed());
                if exs < raw { ex } else { h }
            }).collect();
            if t0.elapsed().as_secs() > 100 { break; }
        }
    }
}
